#pragma once

#include <random>
#include <string>
#include <vector>

#include "fsra/tensor/checkpoint.hpp"
#include "fsra/tensor/tensor.hpp"

namespace fsra {

// Learning-rate group. The backbone trains at a lower rate than the heads.
enum class ParamGroup { kBackbone, kHead };

enum class InitKind {
  kTruncNormal,   // truncated N(0, 0.02²)
  kKaimingNormal, // N(0, 2 / fan_in)
  kZeros,
  kOnes,
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  ParamGroup group = ParamGroup::kBackbone;
  // Weight decay applies only when set; norms and tokens are excluded.
  bool decay = true;
  InitKind init = InitKind::kZeros;
};

// Non-trainable state saved with the model (batch-norm running statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T> value;
};

struct RegionPartition;

struct ForwardContext {
  bool training = false;
  // Source of dropout masks; required when training with dropout > 0.
  std::mt19937_64* rng = nullptr;
  // Region assignment to use instead of the one derived from the heat.
  const RegionPartition* partition = nullptr;
};

template <typename T>
Tensor<T> make_parameter(Shape shape, T fill = T(0)) {
  return Tensor<T>::full(std::move(shape), fill, true);
}

// y = x·W + b with W: [in, out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
std::vector<NamedArray> to_named_arrays(const std::vector<Parameter<T>>& params,
                                        const std::vector<Buffer<T>>& buffers);

// Copies values by name. Throws if a name is missing or an extent differs.
template <typename T>
void load_named_arrays(const std::vector<NamedArray>& arrays, std::vector<Parameter<T>>& params,
                       std::vector<Buffer<T>>& buffers);

}  // namespace fsra
