#include "fsra/tensor/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace fsra {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl<T>>()) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("tensor: shape " + shape_string(shape) +
                                " does not match data length " +
                                std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::ones(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(1), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> data(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(int axis) const {
  const int r = static_cast<int>(rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw std::invalid_argument("tensor: axis out of range for shape " +
                                shape_string(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("tensor: item() on tensor of shape " +
                                shape_string(shape()));
  }
  return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw std::invalid_argument("tensor: index rank mismatch");
  std::size_t offset = 0;
  std::size_t i = 0;
  for (auto v : index) {
    if (v >= impl_->shape[i]) throw std::out_of_range("tensor: index out of range");
    offset = offset * impl_->shape[i] + v;
    ++i;
  }
  return impl_->data[offset];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  return grad_buffer(*impl_);
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(impl_->shape, impl_->data, impl_->requires_grad);
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data, false);
}

template <typename T>
void Tensor<T>::backward() const {
  Tape<T>::current().backward(*this);
}

template <typename T>
Tape<T>& Tape<T>::current() {
  thread_local Tape<T> tape;
  return tape;
}

template <typename T>
void Tape<T>::record(TapeNode<T> node) {
  node.output->on_tape = true;
  nodes_.push_back(std::move(node));
}

template <typename T>
void Tape<T>::clear() {
  for (auto& node : nodes_) node.output->on_tape = false;
  nodes_.clear();
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& root) {
  if (!root.defined() || root.numel() != 1) {
    throw std::invalid_argument("backward: root must be a scalar tensor");
  }
  if (!root.impl()->on_tape) {
    throw std::logic_error(
        "backward: root is not on the tape (already differentiated or not "
        "produced by a recorded operation)");
  }
  auto root_grad = grad_buffer(*root.impl());
  root_grad[0] += T(1);

  // Nodes whose output never received a gradient are not upstream of the root.
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(*it);
  }
  clear();
}

template <typename T>
void accumulate_grad(TensorImpl<T>& impl, std::span<const T> g) {
  auto buf = grad_buffer(impl);
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

template <typename T>
std::span<T> grad_buffer(TensorImpl<T>& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), T(0));
  return impl.grad;
}

template <typename T>
Tensor<T> make_result(const char* name, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> inputs, BackwardFn<T> fn) {
  bool needs_grad = false;
  if (grad_mode_enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  Tensor<T> out(std::move(shape), std::move(data), needs_grad);
  if (needs_grad) {
    TapeNode<T> node;
    node.name = name;
    node.output = out.impl_ptr();
    node.inputs.reserve(inputs.size());
    for (auto& in : inputs) node.inputs.push_back(in.impl_ptr());
    node.backward = std::move(fn);
    Tape<T>::current().record(std::move(node));
  }
  return out;
}

#define FSRA_INSTANTIATE_TENSOR(T)                                               \
  template class Tensor<T>;                                                      \
  template class Tape<T>;                                                        \
  template void accumulate_grad<T>(TensorImpl<T>&, std::span<const T>);          \
  template std::span<T> grad_buffer<T>(TensorImpl<T>&);                          \
  template Tensor<T> make_result<T>(const char*, Shape, std::vector<T>,          \
                                    std::vector<Tensor<T>>, BackwardFn<T>);

FSRA_INSTANTIATE_TENSOR(float)
FSRA_INSTANTIATE_TENSOR(double)

}  // namespace fsra
