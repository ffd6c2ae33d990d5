#include "fsra/model/head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fsra/tensor/ops.hpp"

namespace fsra {

template <typename T>
Tensor<T> patch_heat(const Tensor<T>& patch_features) {
  if (patch_features.rank() != 3) {
    throw std::invalid_argument("patch_heat: expected [B,N,D], got " +
                                shape_string(patch_features.shape()));
  }
  return mean_axis(patch_features, 2);
}

std::vector<std::size_t> region_sizes(std::size_t num_patches, std::size_t regions) {
  if (regions < 1 || regions > num_patches) {
    throw std::invalid_argument("region count " + std::to_string(regions) +
                                " must lie in [1, " + std::to_string(num_patches) + "]");
  }
  const std::size_t base = num_patches / regions;
  std::vector<std::size_t> sizes(regions, base);
  sizes.back() = num_patches - (regions - 1) * base;
  return sizes;
}

std::vector<std::size_t> RegionPartition::members(std::size_t sample, std::uint32_t region) const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < num_patches; ++c) {
    if (region_of(sample, c) == region) out.push_back(c);
  }
  return out;
}

template <typename T>
RegionPartition partition(const Tensor<T>& heat, std::size_t regions) {
  if (heat.rank() != 2) {
    throw std::invalid_argument("partition: expected heat [B,N], got " + shape_string(heat.shape()));
  }
  RegionPartition part;
  part.batch = heat.shape()[0];
  part.num_patches = heat.shape()[1];
  part.regions = regions;
  part.sizes = region_sizes(part.num_patches, regions);
  part.assignment.resize(part.batch * part.num_patches);

  const std::size_t n = part.num_patches;
  std::vector<std::size_t> order(n);
  for (std::size_t b = 0; b < part.batch; ++b) {
    const T* h = heat.data().data() + b * n;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [h](std::size_t x, std::size_t y) { return h[x] > h[y]; });
    std::size_t pos = 0;
    for (std::uint32_t r = 0; r < regions; ++r) {
      for (std::size_t j = 0; j < part.sizes[r]; ++j) {
        part.assignment[b * n + order[pos++]] = r;
      }
    }
  }
  return part;
}

template <typename T>
Tensor<T> region_pool(const Tensor<T>& patch_features, const RegionPartition& part) {
  if (patch_features.rank() != 3 || patch_features.shape()[0] != part.batch ||
      patch_features.shape()[1] != part.num_patches) {
    throw std::invalid_argument("region_pool: features " + shape_string(patch_features.shape()) +
                                " do not match the partition");
  }
  const std::size_t b_count = part.batch;
  const std::size_t n = part.num_patches;
  const std::size_t d = patch_features.shape()[2];
  const std::size_t r_count = part.regions;
  std::vector<T> out(b_count * r_count * d, T(0));
  const T* x = patch_features.data().data();
  for (std::size_t b = 0; b < b_count; ++b) {
    for (std::size_t c = 0; c < n; ++c) {
      const std::uint32_t r = part.region_of(b, c);
      T* dst = out.data() + (b * r_count + r) * d;
      const T* src = x + (b * n + c) * d;
      for (std::size_t i = 0; i < d; ++i) dst[i] += src[i];
    }
    for (std::size_t r = 0; r < r_count; ++r) {
      const T inv = T(1) / static_cast<T>(part.sizes[r]);
      T* dst = out.data() + (b * r_count + r) * d;
      for (std::size_t i = 0; i < d; ++i) dst[i] *= inv;
    }
  }
  return make_result<T>(
      "region_pool", Shape{b_count, r_count, d}, std::move(out), {patch_features},
      [part, d](TapeNode<T>& node) {
        auto& xi = *node.inputs[0];
        T* gx = grad_buffer(xi).data();
        const T* g = node.output->grad.data();
        for (std::size_t b = 0; b < part.batch; ++b) {
          for (std::size_t c = 0; c < part.num_patches; ++c) {
            const std::uint32_t r = part.region_of(b, c);
            const T inv = T(1) / static_cast<T>(part.sizes[r]);
            const T* src = g + (b * part.regions + r) * d;
            T* dst = gx + (b * part.num_patches + c) * d;
            for (std::size_t i = 0; i < d; ++i) dst[i] += src[i] * inv;
          }
        }
      });
}

void HeadConfig::validate(std::size_t num_patches) const {
  if (regions > num_patches) {
    throw std::invalid_argument("head: regions " + std::to_string(regions) + " exceeds " +
                                std::to_string(num_patches) + " patches");
  }
  if (num_classes == 0) throw std::invalid_argument("head: num_classes must be positive");
  if (hidden == 0) throw std::invalid_argument("head: hidden width must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("head: dropout in [0,1)");
}

template <typename T>
ClassifierBlock<T>::ClassifierBlock(const std::string& prefix, std::size_t in_dim,
                                    std::size_t hidden, std::size_t num_classes, double dropout)
    : dropout_(dropout) {
  fc1_w_ = make_parameter<T>({in_dim, hidden});
  fc1_b_ = make_parameter<T>({hidden});
  bn_w_ = make_parameter<T>({hidden}, T(1));
  bn_b_ = make_parameter<T>({hidden});
  fc2_w_ = make_parameter<T>({hidden, num_classes});
  fc2_b_ = make_parameter<T>({num_classes});
  running_mean_ = Tensor<T>::zeros({hidden});
  running_var_ = Tensor<T>::ones({hidden});
  feat_mean_ = Tensor<T>::zeros({in_dim});
  feat_var_ = Tensor<T>::ones({in_dim});

  auto reg = [&](const char* name, Tensor<T>& t, bool decay, InitKind init) {
    params_.push_back(Parameter<T>{prefix + name, t, ParamGroup::kHead, decay, init});
  };
  reg("fc1.weight", fc1_w_, true, InitKind::kKaimingNormal);
  reg("fc1.bias", fc1_b_, true, InitKind::kZeros);
  reg("bn.weight", bn_w_, false, InitKind::kOnes);
  reg("bn.bias", bn_b_, false, InitKind::kZeros);
  reg("fc2.weight", fc2_w_, true, InitKind::kKaimingNormal);
  reg("fc2.bias", fc2_b_, true, InitKind::kZeros);
  buffers_.push_back({prefix + "bn.running_mean", running_mean_});
  buffers_.push_back({prefix + "bn.running_var", running_var_});
  buffers_.push_back({prefix + "feature.running_mean", feat_mean_});
  buffers_.push_back({prefix + "feature.running_var", feat_var_});
}

namespace {

// Batch mean and unbiased variance of a detached [B,C] tensor folded into
// running statistics with the standard momentum.
template <typename T>
void update_running(const Tensor<T>& x, Tensor<T>& mean, Tensor<T>& var) {
  const std::size_t b = x.shape()[0];
  const std::size_t c = x.shape()[1];
  const T m = static_cast<T>(kRunningMomentum);
  auto rm = mean.mutable_data();
  auto rv = var.mutable_data();
  for (std::size_t j = 0; j < c; ++j) {
    T mu = 0;
    for (std::size_t i = 0; i < b; ++i) mu += x.data()[i * c + j];
    mu /= static_cast<T>(b);
    rm[j] = (T(1) - m) * rm[j] + m * mu;
    if (b > 1) {
      T ss = 0;
      for (std::size_t i = 0; i < b; ++i) {
        const T diff = x.data()[i * c + j] - mu;
        ss += diff * diff;
      }
      rv[j] = (T(1) - m) * rv[j] + m * ss / static_cast<T>(b - 1);
    }
  }
}

}  // namespace

template <typename T>
ClassifierOutput<T> ClassifierBlock<T>::forward(const Tensor<T>& features,
                                                const ForwardContext& ctx) {
  if (features.rank() != 2) {
    throw std::invalid_argument("classifier: expected [B,D], got " + shape_string(features.shape()));
  }
  const T eps = static_cast<T>(kBatchNormEps);
  auto h = relu(linear(features, fc1_w_, fc1_b_));
  Tensor<T> normed;
  if (ctx.training) {
    auto mu = mean_axis(h, 0, true);
    auto var = variance_axis(h, 0, true);
    normed = div(sub(h, mu), sqrt(add_scalar(var, eps)));
    update_running(h, running_mean_, running_var_);
    update_running(features, feat_mean_, feat_var_);
  } else {
    std::vector<T> inv(running_var_.numel());
    for (std::size_t i = 0; i < inv.size(); ++i) {
      inv[i] = T(1) / std::sqrt(running_var_.data()[i] + eps);
    }
    normed = mul(sub(h, running_mean_), Tensor<T>(running_var_.shape(), std::move(inv)));
  }
  auto bottleneck = add(mul(normed, bn_w_), bn_b_);
  auto dropped = bottleneck;
  if (ctx.training && dropout_ > 0.0) {
    if (!ctx.rng) throw std::invalid_argument("classifier: training with dropout requires an rng");
    dropped = dropout(bottleneck, dropout_, *ctx.rng, true);
  }
  return {bottleneck, linear(dropped, fc2_w_, fc2_b_)};
}

template <typename T>
Tensor<T> ClassifierBlock<T>::standardize(const Tensor<T>& features) const {
  const std::size_t b = features.shape()[0];
  const std::size_t c = features.shape()[1];
  std::vector<T> out(b * c);
  const T eps = static_cast<T>(kBatchNormEps);
  for (std::size_t j = 0; j < c; ++j) {
    const T inv = T(1) / std::sqrt(feat_var_.data()[j] + eps);
    for (std::size_t i = 0; i < b; ++i) {
      out[i * c + j] = (features.data()[i * c + j] - feat_mean_.data()[j]) * inv;
    }
  }
  return Tensor<T>({b, c}, std::move(out));
}

template <typename T>
FsraHead<T>::FsraHead(HeadConfig config, std::size_t embed_dim, std::size_t num_patches)
    : config_(config), embed_dim_(embed_dim) {
  config_.validate(num_patches);
  classifiers_.reserve(config_.branches());
  for (std::size_t i = 0; i < config_.branches(); ++i) {
    const std::string prefix =
        i == 0 ? "head.global." : "head.region" + std::to_string(i) + ".";
    classifiers_.emplace_back(prefix, embed_dim, config_.hidden, config_.num_classes,
                              config_.dropout);
  }
}

template <typename T>
FeatureBundle<T> FsraHead<T>::forward(const Tensor<T>& global_f, const Tensor<T>& patch_features,
                                      const ForwardContext& ctx) {
  FeatureBundle<T> bundle;
  bundle.global_f = global_f;
  bundle.branch_features.push_back(global_f);
  if (config_.regions > 0) {
    {
      NoGradGuard no_grad;
      bundle.heat = patch_heat(patch_features);
    }
    bundle.partition = partition(bundle.heat, config_.regions);
    if (ctx.partition != nullptr) {
      const auto& fixed = *ctx.partition;
      if (fixed.regions != bundle.partition.regions || fixed.batch != bundle.partition.batch ||
          fixed.num_patches != bundle.partition.num_patches) {
        throw std::invalid_argument("FsraHead: fixed partition does not match the input");
      }
      bundle.partition = fixed;
    }
    bundle.region_v = region_pool(patch_features, bundle.partition);
    const std::size_t b = global_f.shape()[0];
    for (std::size_t r = 0; r < config_.regions; ++r) {
      bundle.branch_features.push_back(
          reshape(slice(bundle.region_v, 1, r, r + 1), {b, embed_dim_}));
    }
  }
  for (std::size_t i = 0; i < classifiers_.size(); ++i) {
    auto out = classifiers_[i].forward(bundle.branch_features[i], ctx);
    bundle.bottlenecks.push_back(out.bottleneck);
    bundle.logits.push_back(out.logits);
  }
  return bundle;
}

template <typename T>
Tensor<T> FsraHead<T>::descriptor(const FeatureBundle<T>& bundle) const {
  std::vector<Tensor<T>> parts;
  for (std::size_t i = 0; i < bundle.branch_features.size(); ++i) {
    parts.push_back(classifiers_[i].standardize(bundle.branch_features[i]));
  }
  NoGradGuard no_grad;
  return concat(parts, 1);
}

template <typename T>
std::vector<Parameter<T>> FsraHead<T>::parameters() {
  std::vector<Parameter<T>> out;
  for (auto& c : classifiers_) {
    auto& p = c.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename T>
std::vector<Buffer<T>> FsraHead<T>::buffers() {
  std::vector<Buffer<T>> out;
  for (auto& c : classifiers_) {
    auto& b = c.buffers();
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

template Tensor<float> patch_heat(const Tensor<float>&);
template Tensor<double> patch_heat(const Tensor<double>&);
template RegionPartition partition(const Tensor<float>&, std::size_t);
template RegionPartition partition(const Tensor<double>&, std::size_t);
template Tensor<float> region_pool(const Tensor<float>&, const RegionPartition&);
template Tensor<double> region_pool(const Tensor<double>&, const RegionPartition&);
template class ClassifierBlock<float>;
template class ClassifierBlock<double>;
template class FsraHead<float>;
template class FsraHead<double>;

}  // namespace fsra
