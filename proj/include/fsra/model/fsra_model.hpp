#pragma once

#include <filesystem>
#include <vector>

#include "fsra/model/head.hpp"
#include "fsra/model/vit.hpp"

namespace fsra {

struct ModelConfig {
  BackboneConfig backbone;
  HeadConfig head;
};

template <typename T>
struct ModelOutput {
  BackboneOutput<T> backbone;
  FeatureBundle<T> bundle;
};

/// Backbone + heat-segmentation head. Parameters are shared between the
/// drone and satellite views.
template <typename T>
class FsraModel {
 public:
  explicit FsraModel(ModelConfig config);
  FsraModel(const FsraModel&) = delete;
  FsraModel& operator=(const FsraModel&) = delete;
  FsraModel(FsraModel&&) = default;
  FsraModel& operator=(FsraModel&&) = default;

  const ModelConfig& config() const { return config_; }
  VitBackbone<T>& backbone() { return backbone_; }
  FsraHead<T>& head() { return head_; }

  // images: [B,H,W,C]
  ModelOutput<T> forward(const Tensor<T>& images, const ForwardContext& ctx);

  // Retrieval descriptors in evaluation mode, [B, (n+1)·D].
  Tensor<T> describe(const Tensor<T>& images);

  std::size_t descriptor_dim() const {
    return config_.head.branches() * config_.backbone.embed_dim;
  }

  // Backbone parameters first, then head parameters, in a fixed order.
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  std::vector<Buffer<T>>& buffers() { return buffers_; }

  std::vector<NamedArray> state() const;
  void load_state(const std::vector<NamedArray>& arrays);

 private:
  ModelConfig config_;
  VitBackbone<T> backbone_;
  FsraHead<T> head_;
  std::vector<Parameter<T>> params_;
  std::vector<Buffer<T>> buffers_;
};

}  // namespace fsra
