#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fsra/model/module.hpp"
#include "fsra/tensor/tensor.hpp"

namespace fsra {

// Per-patch heat: the mean over the feature dimension of each patch's
// output vector. [B,N,D] -> [B,N].
template <typename T>
Tensor<T> patch_heat(const Tensor<T>& patch_features);

// Patches per region for N patches and n regions: ⌊N/n⌋ for the first n−1
// regions, the remainder for the last. Throws unless 1 <= n <= N.
std::vector<std::size_t> region_sizes(std::size_t num_patches, std::size_t regions);

/// Heat-ordered split of each sample's patches into equal-size regions.
struct RegionPartition {
  std::size_t regions = 0;
  std::size_t num_patches = 0;
  std::size_t batch = 0;
  std::vector<std::size_t> sizes;
  // Row-major [batch][num_patches]; region ids are 0-based (0 = hottest).
  std::vector<std::uint32_t> assignment;

  std::uint32_t region_of(std::size_t sample, std::size_t patch) const {
    return assignment[sample * num_patches + patch];
  }
  // Patch indices of one region, ascending.
  std::vector<std::size_t> members(std::size_t sample, std::uint32_t region) const;
};

// Stable descending sort of heat per sample (ties keep ascending patch
// index), then consecutive runs of region_sizes(N, n) patches form regions.
template <typename T>
RegionPartition partition(const Tensor<T>& heat, std::size_t regions);

// Mean of the patch features in each region: [B,N,D] -> [B,n,D].
// Differentiable in the features; the assignment is a constant.
template <typename T>
Tensor<T> region_pool(const Tensor<T>& patch_features, const RegionPartition& part);

struct HeadConfig {
  // 0 keeps only the global branch.
  std::size_t regions = 3;
  std::size_t hidden = 64;
  double dropout = 0.1;
  std::size_t num_classes = 0;

  void validate(std::size_t num_patches) const;
  std::size_t branches() const { return regions + 1; }
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kRunningMomentum = 0.1;

template <typename T>
struct ClassifierOutput {
  Tensor<T> bottleneck;  // [B, hidden], after batch norm
  Tensor<T> logits;      // [B, num_classes]
};

/// linear → relu → batchnorm1d → dropout → linear, with running batch-norm
/// statistics. Also tracks running mean/variance of its input feature, used
/// to standardize the retrieval descriptor.
template <typename T>
class ClassifierBlock {
 public:
  ClassifierBlock(const std::string& prefix, std::size_t in_dim, std::size_t hidden,
                  std::size_t num_classes, double dropout);

  ClassifierOutput<T> forward(const Tensor<T>& features, const ForwardContext& ctx);

  // (x − running_mean) / sqrt(running_var + eps) on a detached copy.
  Tensor<T> standardize(const Tensor<T>& features) const;

  std::vector<Parameter<T>>& parameters() { return params_; }
  std::vector<Buffer<T>>& buffers() { return buffers_; }

 private:
  Tensor<T> fc1_w_, fc1_b_, bn_w_, bn_b_, fc2_w_, fc2_b_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> feat_mean_, feat_var_;
  double dropout_;
  std::vector<Parameter<T>> params_;
  std::vector<Buffer<T>> buffers_;
};

template <typename T>
struct FeatureBundle {
  Tensor<T> global_f;   // [B,D]
  Tensor<T> region_v;   // [B,n,D]; undefined when n = 0
  Tensor<T> heat;       // [B,N]
  RegionPartition partition;
  // Branch 0 is global, branch i>0 is region i−1. Each [B,D].
  std::vector<Tensor<T>> branch_features;
  std::vector<Tensor<T>> bottlenecks;
  std::vector<Tensor<T>> logits;

  std::size_t branch_count() const { return logits.size(); }
};

/// Heat segmentation plus one classifier per branch (global + regions).
template <typename T>
class FsraHead {
 public:
  FsraHead(HeadConfig config, std::size_t embed_dim, std::size_t num_patches);

  const HeadConfig& config() const { return config_; }

  FeatureBundle<T> forward(const Tensor<T>& global_f, const Tensor<T>& patch_features,
                           const ForwardContext& ctx);

  // Concatenated standardized branch features, [B, (n+1)·D], detached.
  Tensor<T> descriptor(const FeatureBundle<T>& bundle) const;

  std::vector<Parameter<T>> parameters();
  std::vector<Buffer<T>> buffers();

 private:
  HeadConfig config_;
  std::size_t embed_dim_;
  std::vector<ClassifierBlock<T>> classifiers_;
};

}  // namespace fsra
