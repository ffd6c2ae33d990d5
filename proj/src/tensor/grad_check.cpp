#include "fsra/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fsra {

namespace {

double evaluate(const std::function<Tensor<double>()>& f) {
  NoGradGuard guard;
  const auto y = f();
  if (y.numel() != 1) throw std::invalid_argument("grad_check: function is not scalar-valued");
  return y.item();
}

}  // namespace

GradCheckResult grad_check_leaves(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> xs, double eps, double tol) {
  return grad_check_leaves_sampled(f, std::move(xs), 0, 0, eps, tol);
}

GradCheckResult grad_check_leaves_sampled(const std::function<Tensor<double>()>& f,
                                          std::vector<Tensor<double>> xs, std::size_t per_leaf,
                                          std::uint64_t seed, double eps, double tol) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  GradCheckResult result;
  for (auto& x : xs) {
    x.zero_grad();
    x.set_requires_grad(true);
  }

  auto& tape = Tape<double>::current();
  tape.clear();
  const auto y = f();
  if (y.numel() != 1) throw std::invalid_argument("grad_check: function is not scalar-valued");
  if (!std::isfinite(y.item())) {
    result.diagnostic = "function value is not finite";
    return result;
  }
  if (y.impl()->on_tape) {
    y.backward();
  } else {
    tape.clear();
  }

  const double f0 = evaluate(f);
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < xs.size(); ++t) {
    auto& x = xs[t];
    const std::vector<double> analytic =
        x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                     : std::vector<double>(x.numel(), 0.0);
    auto data = x.mutable_data();
    std::vector<std::size_t> picks(data.size());
    std::iota(picks.begin(), picks.end(), 0);
    if (per_leaf > 0 && per_leaf < picks.size()) {
      std::shuffle(picks.begin(), picks.end(), rng);
      picks.resize(per_leaf);
      std::sort(picks.begin(), picks.end());
    }
    for (const std::size_t i : picks) {
      const double saved = data[i];
      const double a = analytic[i];
      double numeric = 0.0, rel = 0.0;
      // A kink inside [x−h, x+h] shows up as disagreeing one-sided slopes;
      // shrink h (at most twice) until the window is smooth.
      for (int level = 0; level < 3; ++level) {
        const double h = eps * std::pow(0.1, level);
        data[i] = saved + h;
        const double fp = evaluate(f);
        data[i] = saved - h;
        const double fm = evaluate(f);
        data[i] = saved;
        numeric = (fp - fm) / (2.0 * h);
        if (!std::isfinite(numeric) || !std::isfinite(a)) {
          std::ostringstream os;
          os << "non-finite gradient at input " << t << " element " << i << " (analytic " << a
             << ", numeric " << numeric << ")";
          result.passed = false;
          result.worst_input = t;
          result.worst_index = i;
          result.max_rel_error = std::numeric_limits<double>::infinity();
          result.diagnostic = os.str();
          return result;
        }
        rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
        const double right = (fp - f0) / h, left = (f0 - fm) / h;
        const bool kink =
            std::abs(right - left) > tol * std::max({std::abs(right), std::abs(left), 1e-6});
        if (rel <= tol || !kink) break;
        if (level == 0) ++result.refined;
      }
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_input = t;
        result.worst_index = i;
      }
    }
  }
  result.passed = result.max_rel_error <= tol;
  if (!result.passed) {
    std::ostringstream os;
    os << "max relative error " << result.max_rel_error << " at input " << result.worst_input
       << " element " << result.worst_index << " exceeds " << tol;
    result.diagnostic = os.str();
  }
  return result;
}

GradCheckResult grad_check(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
    const std::vector<Tensor<double>>& inputs, double eps, double tol) {
  std::vector<Tensor<double>> xs;
  xs.reserve(inputs.size());
  for (const auto& in : inputs) xs.push_back(in.detach());
  return grad_check_leaves([&] { return f(xs); }, xs, eps, tol);
}

GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, double eps, double tol) {
  return grad_check(
      [&f](const std::vector<Tensor<double>>& xs) { return f(xs[0]); }, {x}, eps, tol);
}

}  // namespace fsra
