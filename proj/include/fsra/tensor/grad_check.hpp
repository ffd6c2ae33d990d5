#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fsra/tensor/tensor.hpp"

namespace fsra {

struct GradCheckResult {
  bool passed = false;
  double max_rel_error = 0.0;
  // Input and flat element index of the worst mismatch.
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  // Elements re-checked at a smaller step because the function had a kink
  // (ReLU, max, hinge) within eps of the point.
  std::size_t refined = 0;
  std::string diagnostic;
};

/// Compares reverse-mode gradients of a scalar function with central
/// differences (f(x+eps) − f(x−eps)) / 2eps, element by element.
///
/// Relative error per element is |a − n| / max(|a|, |n|, 1e-6). Non-finite
/// values fail the check with a diagnostic naming the element. When the
/// one-sided slopes disagree the step shrinks to eps/10, then eps/100.
GradCheckResult grad_check(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
    const std::vector<Tensor<double>>& inputs, double eps = 1e-5, double tol = 1e-4);

GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, double eps = 1e-5, double tol = 1e-4);

// Same check over tensors that `f` captures directly (model parameters).
// The leaves are perturbed in place and restored; their gradients are reset.
GradCheckResult grad_check_leaves(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> leaves, double eps = 1e-5,
                                  double tol = 1e-4);

// As grad_check_leaves on `per_leaf` elements drawn from each leaf by `seed`
// (every element when per_leaf is 0 or at least the leaf size).
GradCheckResult grad_check_leaves_sampled(const std::function<Tensor<double>()>& f,
                                          std::vector<Tensor<double>> leaves, std::size_t per_leaf,
                                          std::uint64_t seed, double eps = 1e-5, double tol = 1e-4);

}  // namespace fsra
