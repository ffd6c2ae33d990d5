#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fsra {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  // Empty until the first gradient is accumulated; then same length as data.
  std::vector<T> grad;
  bool requires_grad = false;
  // Set while the tensor is the output of an operation recorded on the tape.
  bool on_tape = false;
};

/// Dense row-major tensor handle. Copies share storage; use clone() for a deep copy.
///
/// Data is treated as immutable once the tensor takes part in a recorded
/// operation. Parameters are the exception: the optimizer writes through
/// mutable_data() between steps, when the tape is empty.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(int axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad();
  void zero_grad();

  Tensor clone() const;
  // Same data, cut off from the tape and from gradient tracking.
  Tensor detach() const;

  void backward() const;

  TensorImpl<T>* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl<T>>& impl_ptr() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// One executed differentiable operation.
template <typename T>
struct TapeNode {
  const char* name = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::shared_ptr<TensorImpl<T>> output;
  // Reads output->grad and accumulates into the inputs' grads.
  std::function<void(TapeNode&)> backward;
};

/// Ordered record of the differentiable operations executed on this thread.
///
/// The tape is single-use: backward() walks it once in reverse and clears it,
/// so a second backward() on the same root fails because the root is no
/// longer on the tape.
template <typename T>
class Tape {
 public:
  static Tape& current();

  void record(TapeNode<T> node);
  std::size_t size() const { return nodes_.size(); }
  void clear();
  void backward(const Tensor<T>& root);

 private:
  std::vector<TapeNode<T>> nodes_;
};

/// Disables recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

template <typename T>
void backward(const Tensor<T>& root) {
  Tape<T>::current().backward(root);
}

template <typename T>
using BackwardFn = std::function<void(TapeNode<T>&)>;

/// Builds an output tensor from precomputed data and records `fn` as its
/// backward rule when any input requires grad.
template <typename T>
Tensor<T> make_result(const char* name, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> inputs, BackwardFn<T> fn);

/// Adds `g` into the gradient buffer of `impl`, allocating it on first use.
template <typename T>
void accumulate_grad(TensorImpl<T>& impl, std::span<const T> g);

/// Returns the gradient buffer of `impl`, zero-allocating it if needed.
template <typename T>
std::span<T> grad_buffer(TensorImpl<T>& impl);

}  // namespace fsra
