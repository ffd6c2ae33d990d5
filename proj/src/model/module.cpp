#include "fsra/model/module.hpp"

#include <stdexcept>
#include <unordered_map>

#include "fsra/tensor/ops.hpp"

namespace fsra {

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add(matmul(x, weight), bias);
}

namespace {

template <typename T>
NamedArray to_array(const std::string& name, const Tensor<T>& t) {
  NamedArray a;
  a.name = name;
  for (auto e : t.shape()) a.extents.push_back(static_cast<std::uint32_t>(e));
  a.values.reserve(t.numel());
  for (T v : t.data()) a.values.push_back(static_cast<float>(v));
  return a;
}

template <typename T>
void copy_into(const NamedArray& a, Tensor<T>& t) {
  bool same = a.extents.size() == t.rank();
  for (std::size_t i = 0; same && i < t.rank(); ++i) same = a.extents[i] == t.shape()[i];
  if (!same) {
    throw std::runtime_error("checkpoint entry '" + a.name + "' has extents incompatible with " +
                             shape_string(t.shape()));
  }
  auto dst = t.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(a.values[i]);
}

}  // namespace

template <typename T>
std::vector<NamedArray> to_named_arrays(const std::vector<Parameter<T>>& params,
                                        const std::vector<Buffer<T>>& buffers) {
  std::vector<NamedArray> out;
  out.reserve(params.size() + buffers.size());
  for (const auto& p : params) out.push_back(to_array(p.name, p.value));
  for (const auto& b : buffers) out.push_back(to_array(b.name, b.value));
  return out;
}

template <typename T>
void load_named_arrays(const std::vector<NamedArray>& arrays, std::vector<Parameter<T>>& params,
                       std::vector<Buffer<T>>& buffers) {
  std::unordered_map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  auto find = [&](const std::string& name) -> const NamedArray& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint is missing '" + name + "'");
    return *it->second;
  };
  for (auto& p : params) copy_into(find(p.name), p.value);
  for (auto& b : buffers) copy_into(find(b.name), b.value);
}

template Tensor<float> linear(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> linear(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);
template std::vector<NamedArray> to_named_arrays(const std::vector<Parameter<float>>&,
                                                 const std::vector<Buffer<float>>&);
template std::vector<NamedArray> to_named_arrays(const std::vector<Parameter<double>>&,
                                                 const std::vector<Buffer<double>>&);
template void load_named_arrays(const std::vector<NamedArray>&, std::vector<Parameter<float>>&,
                                std::vector<Buffer<float>>&);
template void load_named_arrays(const std::vector<NamedArray>&, std::vector<Parameter<double>>&,
                                std::vector<Buffer<double>>&);

}  // namespace fsra
