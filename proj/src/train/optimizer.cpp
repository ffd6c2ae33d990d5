#include "fsra/train/optimizer.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace fsra {

template <typename T>
void init_params(std::vector<Parameter<T>>& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& p : params) {
    auto data = p.value.mutable_data();
    switch (p.init) {
      case InitKind::kZeros:
        std::fill(data.begin(), data.end(), T(0));
        break;
      case InitKind::kOnes:
        std::fill(data.begin(), data.end(), T(1));
        break;
      case InitKind::kTruncNormal:
        for (auto& v : data) {
          double z;
          do {
            z = normal(rng);
          } while (std::abs(z) > 2.0);
          v = static_cast<T>(0.02 * z);
        }
        break;
      case InitKind::kKaimingNormal: {
        // Weights are stored [fan_in, fan_out].
        const double fan_in = p.value.rank() >= 2 ? static_cast<double>(p.value.shape()[0]) : 1.0;
        const double std = std::sqrt(2.0 / fan_in);
        for (auto& v : data) v = static_cast<T>(std * normal(rng));
        break;
      }
    }
  }
}

double LrSchedule::multiplier(std::size_t epoch) const {
  double m = 1.0;
  for (auto milestone : milestones) {
    if (epoch >= milestone) m *= factor;
  }
  return m;
}

LrSchedule LrSchedule::scaled(std::size_t epochs, std::size_t reference,
                              std::vector<std::size_t> base, double factor) {
  LrSchedule s;
  s.factor = factor;
  s.milestones.clear();
  for (auto m : base) {
    s.milestones.push_back((epochs * m + reference - 1) / reference);
  }
  return s;
}

template <typename T>
Sgd<T>::Sgd(std::vector<Parameter<T>> params, SgdConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.lr_backbone > 0.0) || !(config_.lr_heads > 0.0)) {
    throw std::invalid_argument("sgd: learning rates must be positive");
  }
  if (config_.momentum < 0.0 || config_.weight_decay < 0.0) {
    throw std::invalid_argument("sgd: momentum and weight decay must be non-negative");
  }
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.value.numel(), T(0));
}

template <typename T>
double Sgd<T>::lr_for(const Parameter<T>& p, double multiplier) const {
  return multiplier * (p.group == ParamGroup::kBackbone ? config_.lr_backbone : config_.lr_heads);
}

template <typename T>
void Sgd<T>::step(double lr_multiplier) {
  for (const auto& p : params_) {
    for (T g : p.value.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw std::runtime_error("sgd: non-finite gradient in parameter '" + p.name + "'");
      }
    }
  }
  const T mu = static_cast<T>(config_.momentum);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.value.has_grad()) continue;
    const T lr = static_cast<T>(lr_for(p, lr_multiplier));
    const T wd = p.decay ? static_cast<T>(config_.weight_decay) : T(0);
    auto data = p.value.mutable_data();
    auto grad = p.value.grad();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      v[j] = mu * v[j] + (grad[j] + wd * data[j]);
      data[j] -= lr * v[j];
    }
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <typename T>
std::vector<NamedArray> Sgd<T>::state() const {
  std::vector<NamedArray> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    NamedArray a;
    a.name = "optim.momentum." + params_[i].name;
    for (auto e : params_[i].value.shape()) a.extents.push_back(static_cast<std::uint32_t>(e));
    a.values.assign(velocity_[i].begin(), velocity_[i].end());
    out.push_back(std::move(a));
  }
  return out;
}

template <typename T>
void Sgd<T>::load_state(const std::vector<NamedArray>& arrays) {
  std::unordered_map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto it = by_name.find("optim.momentum." + params_[i].name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint is missing momentum for '" + params_[i].name + "'");
    }
    if (it->second->values.size() != velocity_[i].size()) {
      throw std::runtime_error("momentum size mismatch for '" + params_[i].name + "'");
    }
    for (std::size_t j = 0; j < velocity_[i].size(); ++j) {
      velocity_[i][j] = static_cast<T>(it->second->values[j]);
    }
  }
}

template void init_params(std::vector<Parameter<float>>&, std::uint64_t);
template void init_params(std::vector<Parameter<double>>&, std::uint64_t);
template class Sgd<float>;
template class Sgd<double>;

}  // namespace fsra
