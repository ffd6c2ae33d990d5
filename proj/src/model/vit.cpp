#include "fsra/model/vit.hpp"

#include <cmath>
#include <stdexcept>

#include "fsra/tensor/ops.hpp"

namespace fsra {

void BackboneConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw std::invalid_argument("backbone: image_size " + std::to_string(image_size) +
                                " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw std::invalid_argument("backbone: embed_dim " + std::to_string(embed_dim) +
                                " is not divisible by heads " + std::to_string(heads));
  }
  if (channels == 0) throw std::invalid_argument("backbone: channels must be positive");
  if (!(mlp_ratio > 0.0)) throw std::invalid_argument("backbone: mlp_ratio must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("backbone: dropout in [0,1)");
}

std::size_t BackboneConfig::mlp_hidden() const {
  return static_cast<std::size_t>(std::lround(static_cast<double>(embed_dim) * mlp_ratio));
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch_size) {
  if (images.rank() != 4) throw std::invalid_argument("patchify: expected [B,H,W,C] images");
  const auto& s = images.shape();
  const std::size_t b = s[0], h = s[1], w = s[2], c = s[3];
  if (patch_size == 0 || h % patch_size != 0 || w % patch_size != 0) {
    throw std::invalid_argument("patchify: image " + shape_string(s) +
                                " is not divisible into patches of " + std::to_string(patch_size));
  }
  const std::size_t gh = h / patch_size, gw = w / patch_size;
  auto x = reshape(images, {b, gh, patch_size, gw, patch_size, c});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  return reshape(x, {b, gh * gw, patch_size * patch_size * c});
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t height, std::size_t width,
                     std::size_t channels, std::size_t patch_size) {
  if (patches.rank() != 3 || patch_size == 0 || height % patch_size || width % patch_size) {
    throw std::invalid_argument("unpatchify: inconsistent geometry");
  }
  const std::size_t b = patches.shape()[0];
  const std::size_t gh = height / patch_size, gw = width / patch_size;
  if (patches.shape()[1] != gh * gw || patches.shape()[2] != patch_size * patch_size * channels) {
    throw std::invalid_argument("unpatchify: patch tensor " + shape_string(patches.shape()) +
                                " does not match the image geometry");
  }
  auto x = reshape(patches, {b, gh, gw, patch_size, patch_size, channels});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  return reshape(x, {b, height, width, channels});
}

template <typename T>
VitBackbone<T>::VitBackbone(BackboneConfig config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.embed_dim;
  const std::size_t n = config_.num_patches();
  const std::size_t hidden = config_.mlp_hidden();

  patch_w_ = make_parameter<T>({config_.patch_dim(), d});
  patch_b_ = make_parameter<T>({d});
  cls_token_ = make_parameter<T>({d});
  pos_embed_ = make_parameter<T>({n + 1, d});
  register_param("backbone.patch_embed.weight", patch_w_, true, InitKind::kTruncNormal);
  register_param("backbone.patch_embed.bias", patch_b_, true, InitKind::kZeros);
  register_param("backbone.cls_token", cls_token_, false, InitKind::kZeros);
  register_param("backbone.pos_embed", pos_embed_, false, InitKind::kTruncNormal);

  layers_.resize(config_.depth);
  for (std::size_t i = 0; i < config_.depth; ++i) {
    auto& l = layers_[i];
    const std::string p = "backbone.blocks." + std::to_string(i) + ".";
    l.norm1_w = make_parameter<T>({d}, T(1));
    l.norm1_b = make_parameter<T>({d});
    l.q_w = make_parameter<T>({d, d});
    l.q_b = make_parameter<T>({d});
    l.k_w = make_parameter<T>({d, d});
    l.k_b = make_parameter<T>({d});
    l.v_w = make_parameter<T>({d, d});
    l.v_b = make_parameter<T>({d});
    l.proj_w = make_parameter<T>({d, d});
    l.proj_b = make_parameter<T>({d});
    l.norm2_w = make_parameter<T>({d}, T(1));
    l.norm2_b = make_parameter<T>({d});
    l.fc1_w = make_parameter<T>({d, hidden});
    l.fc1_b = make_parameter<T>({hidden});
    l.fc2_w = make_parameter<T>({hidden, d});
    l.fc2_b = make_parameter<T>({d});
    register_param(p + "norm1.weight", l.norm1_w, false, InitKind::kOnes);
    register_param(p + "norm1.bias", l.norm1_b, false, InitKind::kZeros);
    register_param(p + "attn.q.weight", l.q_w, true, InitKind::kTruncNormal);
    register_param(p + "attn.q.bias", l.q_b, true, InitKind::kZeros);
    register_param(p + "attn.k.weight", l.k_w, true, InitKind::kTruncNormal);
    register_param(p + "attn.k.bias", l.k_b, true, InitKind::kZeros);
    register_param(p + "attn.v.weight", l.v_w, true, InitKind::kTruncNormal);
    register_param(p + "attn.v.bias", l.v_b, true, InitKind::kZeros);
    register_param(p + "attn.proj.weight", l.proj_w, true, InitKind::kTruncNormal);
    register_param(p + "attn.proj.bias", l.proj_b, true, InitKind::kZeros);
    register_param(p + "norm2.weight", l.norm2_w, false, InitKind::kOnes);
    register_param(p + "norm2.bias", l.norm2_b, false, InitKind::kZeros);
    register_param(p + "mlp.fc1.weight", l.fc1_w, true, InitKind::kTruncNormal);
    register_param(p + "mlp.fc1.bias", l.fc1_b, true, InitKind::kZeros);
    register_param(p + "mlp.fc2.weight", l.fc2_w, true, InitKind::kTruncNormal);
    register_param(p + "mlp.fc2.bias", l.fc2_b, true, InitKind::kZeros);
  }
}

template <typename T>
void VitBackbone<T>::register_param(const std::string& name, Tensor<T>& t, bool decay,
                                    InitKind init) {
  params_.push_back(Parameter<T>{name, t, ParamGroup::kBackbone, decay, init});
}

template <typename T>
TokenSequence<T> VitBackbone<T>::embed(const Tensor<T>& patches) const {
  if (patches.rank() != 3 || patches.shape()[1] != config_.num_patches() ||
      patches.shape()[2] != config_.patch_dim()) {
    throw std::invalid_argument("embed: expected patches [B," +
                                std::to_string(config_.num_patches()) + "," +
                                std::to_string(config_.patch_dim()) + "], got " +
                                shape_string(patches.shape()));
  }
  const std::size_t b = patches.shape()[0];
  const std::size_t d = config_.embed_dim;
  auto projected = linear(patches, patch_w_, patch_b_);  // [B,N,D]
  // Broadcast the class token over the batch.
  auto cls = add(Tensor<T>::zeros({b, 1, d}), reshape(cls_token_, {1, 1, d}));
  auto tokens = concat<T>({cls, projected}, 1);
  return {add(tokens, pos_embed_)};
}

template <typename T>
Tensor<T> VitBackbone<T>::attention_block(const Layer& l, const Tensor<T>& x,
                                          const ForwardContext& ctx,
                                          std::vector<Tensor<T>>* attention) const {
  const std::size_t b = x.shape()[0];
  const std::size_t t = x.shape()[1];
  const std::size_t d = config_.embed_dim;
  const std::size_t h = config_.heads;
  const std::size_t dh = d / h;

  auto normed = layer_norm(x, l.norm1_w, l.norm1_b);
  auto split_heads = [&](const Tensor<T>& y) {
    return permute(reshape(y, {b, t, h, dh}), {0, 2, 1, 3});  // [B,h,T,dh]
  };
  auto q = split_heads(linear(normed, l.q_w, l.q_b));
  auto k = split_heads(linear(normed, l.k_w, l.k_b));
  auto v = split_heads(linear(normed, l.v_w, l.v_b));

  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  auto scores = mul_scalar(matmul(q, transpose(k, 2, 3)), scale);  // [B,h,T,T]
  auto probs = softmax(scores, 3);
  if (attention) attention->push_back(probs);
  auto ctx_heads = matmul(probs, v);  // [B,h,T,dh]
  auto merged = reshape(permute(ctx_heads, {0, 2, 1, 3}), {b, t, d});
  auto out = linear(merged, l.proj_w, l.proj_b);
  if (ctx.training && config_.dropout > 0.0) out = dropout(out, config_.dropout, *ctx.rng, true);
  return out;
}

template <typename T>
Tensor<T> VitBackbone<T>::mlp_block(const Layer& l, const Tensor<T>& x,
                                    const ForwardContext& ctx) const {
  auto y = gelu(linear(layer_norm(x, l.norm2_w, l.norm2_b), l.fc1_w, l.fc1_b));
  const bool drop = ctx.training && config_.dropout > 0.0;
  if (drop) y = dropout(y, config_.dropout, *ctx.rng, true);
  y = linear(y, l.fc2_w, l.fc2_b);
  if (drop) y = dropout(y, config_.dropout, *ctx.rng, true);
  return y;
}

template <typename T>
BackboneOutput<T> VitBackbone<T>::forward(const TokenSequence<T>& seq, const ForwardContext& ctx,
                                          std::vector<Tensor<T>>* attention) const {
  if (ctx.training && config_.dropout > 0.0 && ctx.rng == nullptr) {
    throw std::invalid_argument("backbone: training with dropout requires an rng");
  }
  auto x = seq.tokens;
  for (const auto& layer : layers_) {
    x = add(x, attention_block(layer, x, ctx, attention));
    x = add(x, mlp_block(layer, x, ctx));
  }
  const std::size_t b = x.shape()[0];
  const std::size_t t = x.shape()[1];
  const std::size_t d = x.shape()[2];
  BackboneOutput<T> out;
  out.global = reshape(slice(x, 1, 0, 1), {b, d});
  out.patches = slice(x, 1, 1, t);
  return out;
}

template <typename T>
BackboneOutput<T> VitBackbone<T>::operator()(const Tensor<T>& images,
                                             const ForwardContext& ctx) const {
  if (images.rank() != 4 || images.shape()[1] != config_.image_size ||
      images.shape()[2] != config_.image_size || images.shape()[3] != config_.channels) {
    throw std::invalid_argument("backbone: expected images [B," +
                                std::to_string(config_.image_size) + "," +
                                std::to_string(config_.image_size) + "," +
                                std::to_string(config_.channels) + "], got " +
                                shape_string(images.shape()));
  }
  return forward(embed(patchify(images, config_.patch_size)), ctx);
}

template class VitBackbone<float>;
template class VitBackbone<double>;
template Tensor<float> patchify(const Tensor<float>&, std::size_t);
template Tensor<double> patchify(const Tensor<double>&, std::size_t);
template Tensor<float> unpatchify(const Tensor<float>&, std::size_t, std::size_t, std::size_t,
                                  std::size_t);
template Tensor<double> unpatchify(const Tensor<double>&, std::size_t, std::size_t, std::size_t,
                                   std::size_t);

}  // namespace fsra
