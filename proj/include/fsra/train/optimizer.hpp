#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsra/model/module.hpp"

namespace fsra {

/// Kaiming-normal (fan-in, rectifier gain) for classifier weights, truncated
/// N(0, 0.02²) for backbone weights and position embeddings, zeros for biases
/// and the class token, ones for norm scales. Same seed, same values.
template <typename T>
void init_params(std::vector<Parameter<T>>& params, std::uint64_t seed);

struct SgdConfig {
  double lr_backbone = 0.003;
  double lr_heads = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
};

/// Step decay: every milestone at or before `epoch` multiplies the rates by `factor`.
struct LrSchedule {
  std::vector<std::size_t> milestones{70, 110};
  double factor = 0.1;

  double multiplier(std::size_t epoch) const;
  // Milestones rescaled to a run of `epochs` epochs: ⌈epochs·m/reference⌉.
  static LrSchedule scaled(std::size_t epochs, std::size_t reference = 120,
                           std::vector<std::size_t> base = {70, 110}, double factor = 0.1);
};

/// SGD with momentum and decoupled-by-group learning rates:
///   v ← μ·v + (g + wd·p);  p ← p − lr·v
/// Weight decay is skipped for parameters flagged decay = false.
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Parameter<T>> params, SgdConfig config);

  // Throws std::runtime_error naming the parameter when any gradient is
  // non-finite; no parameter is modified in that case.
  void step(double lr_multiplier = 1.0);
  void zero_grad();

  double lr_for(const Parameter<T>& p, double multiplier) const;
  const SgdConfig& config() const { return config_; }
  std::vector<Parameter<T>>& params() { return params_; }

  std::vector<NamedArray> state() const;
  void load_state(const std::vector<NamedArray>& arrays);

 private:
  std::vector<Parameter<T>> params_;
  std::vector<std::vector<T>> velocity_;
  SgdConfig config_;
};

}  // namespace fsra
