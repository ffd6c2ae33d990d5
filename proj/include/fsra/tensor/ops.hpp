#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "fsra/tensor/tensor.hpp"

// Differentiable tensor operations. Every function records itself on the
// current thread's tape when grad mode is on and an input requires grad.
// Shape errors raise std::invalid_argument.
namespace fsra {

// Binary ops broadcast numpy-style over leading and size-1 extents.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& x, T value);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
// Exact (erf) form.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> sqrt(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> sum_axis(const Tensor<T>& x, int axis, bool keepdim = false);
template <typename T> Tensor<T> mean_axis(const Tensor<T>& x, int axis, bool keepdim = false);
// Population (biased) variance along `axis`.
template <typename T> Tensor<T> variance_axis(const Tensor<T>& x, int axis, bool keepdim = false);

// Max-subtracted for stability.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x, int axis);

inline constexpr double kLayerNormEps = 1e-6;

// Normalizes over the last axis. gamma/beta may be undefined (no affine).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = static_cast<T>(kLayerNormEps));

// Inverted dropout. The mask is sampled from `rng` and treated as a constant;
// identity when !training or p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, std::mt19937_64& rng, bool training);

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& dims);
template <typename T> Tensor<T> transpose(const Tensor<T>& x, int axis0, int axis1);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t begin, std::size_t end);
template <typename T>
Tensor<T> index_select(const Tensor<T>& x, int axis, std::span<const std::size_t> indices);

// ‖a_i − b_j‖₂ for a: [B1,D], b: [B2,D]. The gradient at a zero distance is taken as zero.
template <typename T> Tensor<T> pairwise_euclidean(const Tensor<T>& a, const Tensor<T>& b);

// Detached copy of a float tensor in another precision.
template <typename To, typename From> Tensor<To> cast(const Tensor<From>& x);

}  // namespace fsra
