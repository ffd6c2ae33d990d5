#include "fsra/model/fsra_model.hpp"

namespace fsra {

template <typename T>
FsraModel<T>::FsraModel(ModelConfig config)
    : config_(config),
      backbone_(config.backbone),
      head_(config.head, config.backbone.embed_dim, config.backbone.num_patches()) {
  params_ = backbone_.parameters();
  auto head_params = head_.parameters();
  params_.insert(params_.end(), head_params.begin(), head_params.end());
  buffers_ = head_.buffers();
}

template <typename T>
ModelOutput<T> FsraModel<T>::forward(const Tensor<T>& images, const ForwardContext& ctx) {
  ModelOutput<T> out;
  out.backbone = backbone_(images, ctx);
  out.bundle = head_.forward(out.backbone.global, out.backbone.patches, ctx);
  return out;
}

template <typename T>
Tensor<T> FsraModel<T>::describe(const Tensor<T>& images) {
  NoGradGuard no_grad;
  ForwardContext ctx;
  ctx.training = false;
  auto out = forward(images, ctx);
  return head_.descriptor(out.bundle);
}

template <typename T>
std::vector<NamedArray> FsraModel<T>::state() const {
  return to_named_arrays(params_, buffers_);
}

template <typename T>
void FsraModel<T>::load_state(const std::vector<NamedArray>& arrays) {
  load_named_arrays(arrays, params_, buffers_);
}

template class FsraModel<float>;
template class FsraModel<double>;

}  // namespace fsra
