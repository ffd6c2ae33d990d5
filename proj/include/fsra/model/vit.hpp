#pragma once

#include <cstddef>
#include <vector>

#include "fsra/model/module.hpp"
#include "fsra/tensor/tensor.hpp"

namespace fsra {

struct BackboneConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  double dropout = 0.0;

  // Throws std::invalid_argument when the geometry is inconsistent.
  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t mlp_hidden() const;

  static BackboneConfig vit_micro() { return {}; }
  static BackboneConfig vit_small_like() { return {256, 16, 3, 384, 12, 6, 4.0, 0.0}; }
};

// [B,H,W,C] -> [B,N,P·P·C], patches in row-major grid order, each flattened
// row-major over (py, px, c).
template <typename T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch_size);

// Inverse of patchify.
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t height, std::size_t width,
                     std::size_t channels, std::size_t patch_size);

template <typename T>
struct TokenSequence {
  Tensor<T> tokens;  // [B, N+1, D], position 0 is the class token
};

template <typename T>
struct BackboneOutput {
  Tensor<T> global;   // [B, D], output class token
  Tensor<T> patches;  // [B, N, D]
};

/// Vision transformer trunk: linear patch projection, class token, learnable
/// position embedding and a stack of pre-norm transformer layers.
///
/// Parameters are zero-filled (norm scales one) on construction; training
/// code initializes them through their InitKind tags.
template <typename T>
class VitBackbone {
 public:
  explicit VitBackbone(BackboneConfig config);

  const BackboneConfig& config() const { return config_; }

  TokenSequence<T> embed(const Tensor<T>& patches) const;

  // When `attention` is non-null, receives each layer's attention
  // probabilities [B, heads, N+1, N+1].
  BackboneOutput<T> forward(const TokenSequence<T>& seq, const ForwardContext& ctx,
                            std::vector<Tensor<T>>* attention = nullptr) const;

  BackboneOutput<T> operator()(const Tensor<T>& images, const ForwardContext& ctx) const;

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }

  Tensor<T>& position_embedding() { return pos_embed_; }
  Tensor<T>& class_token() { return cls_token_; }
  Tensor<T>& patch_weight() { return patch_w_; }
  Tensor<T>& patch_bias() { return patch_b_; }

 private:
  struct Layer {
    Tensor<T> norm1_w, norm1_b;
    Tensor<T> q_w, q_b, k_w, k_b, v_w, v_b;
    Tensor<T> proj_w, proj_b;
    Tensor<T> norm2_w, norm2_b;
    Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;
  };

  Tensor<T> attention_block(const Layer& layer, const Tensor<T>& x, const ForwardContext& ctx,
                            std::vector<Tensor<T>>* attention) const;
  Tensor<T> mlp_block(const Layer& layer, const Tensor<T>& x, const ForwardContext& ctx) const;
  void register_param(const std::string& name, Tensor<T>& t, bool decay, InitKind init);

  BackboneConfig config_;
  Tensor<T> patch_w_, patch_b_;
  Tensor<T> cls_token_;
  Tensor<T> pos_embed_;
  std::vector<Layer> layers_;
  std::vector<Parameter<T>> params_;
};

}  // namespace fsra
