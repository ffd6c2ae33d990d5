#include "fsra/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fsra {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw std::invalid_argument(std::string(op) + ": axis out of range");
  }
  return static_cast<std::size_t>(axis);
}

// Splits a shape around `axis` into outer * len * inner.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// ---------------------------------------------------------------------------
// Broadcasting

struct Broadcast {
  enum class Kind { kSame, kBSuffix, kASuffix, kGeneral };
  Kind kind = Kind::kSame;
  Shape out;
  std::size_t na = 0;
  std::size_t nb = 0;
  std::vector<std::size_t> stride_a;  // per output axis, 0 when broadcast
  std::vector<std::size_t> stride_b;
};

// True when `small` (ignoring leading 1s) equals the trailing extents of `big`.
bool is_suffix(const Shape& small, const Shape& big) {
  std::size_t lead = 0;
  while (lead < small.size() && small[lead] == 1 && small.size() - lead > 0) ++lead;
  const std::size_t len = small.size() - lead;
  if (len > big.size()) return false;
  for (std::size_t i = 0; i < len; ++i) {
    if (small[lead + i] != big[big.size() - len + i]) return false;
  }
  return true;
}

Broadcast make_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  const std::size_t rank = std::max(a.size(), b.size());
  p.out.assign(rank, 1);
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      p.out[i] = pa[i];
    } else if (pa[i] == 1) {
      p.out[i] = pb[i];
    } else {
      throw std::invalid_argument(std::string(op) + ": cannot broadcast " +
                                  shape_string(a) + " with " + shape_string(b));
    }
  }
  p.na = shape_numel(a);
  p.nb = shape_numel(b);
  const auto ca = contiguous_strides(pa);
  const auto cb = contiguous_strides(pb);
  p.stride_a.resize(rank);
  p.stride_b.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    p.stride_a[i] = pa[i] == 1 ? 0 : ca[i];
    p.stride_b[i] = pb[i] == 1 ? 0 : cb[i];
  }
  const std::size_t n_out = shape_numel(p.out);
  if (pa == pb) {
    p.kind = Broadcast::Kind::kSame;
  } else if (p.na == n_out && is_suffix(b, p.out)) {
    p.kind = Broadcast::Kind::kBSuffix;
  } else if (p.nb == n_out && is_suffix(a, p.out)) {
    p.kind = Broadcast::Kind::kASuffix;
  } else {
    p.kind = Broadcast::Kind::kGeneral;
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void broadcast_loop(const Broadcast& p, F&& f) {
  const std::size_t n = shape_numel(p.out);
  switch (p.kind) {
    case Broadcast::Kind::kSame:
      for (std::size_t i = 0; i < n; ++i) f(i, i, i);
      return;
    case Broadcast::Kind::kBSuffix: {
      if (p.nb == 0) return;
      for (std::size_t o = 0; o < n; o += p.nb) {
        for (std::size_t j = 0; j < p.nb; ++j) f(o + j, o + j, j);
      }
      return;
    }
    case Broadcast::Kind::kASuffix: {
      if (p.na == 0) return;
      for (std::size_t o = 0; o < n; o += p.na) {
        for (std::size_t j = 0; j < p.na; ++j) f(o + j, j, o + j);
      }
      return;
    }
    case Broadcast::Kind::kGeneral: {
      const std::size_t rank = p.out.size();
      std::vector<std::size_t> counter(rank, 0);
      std::size_t ia = 0, ib = 0;
      for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t d = rank; d-- > 0;) {
          ++counter[d];
          ia += p.stride_a[d];
          ib += p.stride_b[d];
          if (counter[d] < p.out[d]) break;
          ia -= p.stride_a[d] * counter[d];
          ib -= p.stride_b[d] * counter[d];
          counter[d] = 0;
        }
      }
      return;
    }
  }
}

// fwd(x, y) -> z; dx(x, y, z) and dy(x, y, z) are the local partials.
template <typename T, typename Fwd, typename Dx, typename Dy>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd,
                    Dx dx, Dy dy) {
  auto plan = make_broadcast(a.shape(), b.shape(), name);
  std::vector<T> out(shape_numel(plan.out));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  broadcast_loop(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    out[i] = fwd(pa[ia], pb[ib]);
  });
  Shape out_shape = plan.out;
  return make_result<T>(
      name, std::move(out_shape), std::move(out), {a, b},
      [plan = std::move(plan), dx, dy](TapeNode<T>& node) {
        auto& ai = *node.inputs[0];
        auto& bi = *node.inputs[1];
        const auto& o = *node.output;
        const T* g = o.grad.data();
        const T* z = o.data.data();
        const T* xa = ai.data.data();
        const T* xb = bi.data.data();
        if (ai.requires_grad) {
          T* ga = grad_buffer(ai).data();
          broadcast_loop(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            ga[ia] += g[i] * dx(xa[ia], xb[ib], z[i]);
          });
        }
        if (bi.requires_grad) {
          T* gb = grad_buffer(bi).data();
          broadcast_loop(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            gb[ib] += g[i] * dy(xa[ia], xb[ib], z[i]);
          });
        }
      });
}

// fwd(x) -> y; deriv(x, y) is dy/dx.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result<T>(name, x.shape(), std::move(out), {x}, [deriv](TapeNode<T>& node) {
    auto& xi = *node.inputs[0];
    const auto& o = *node.output;
    T* gx = grad_buffer(xi).data();
    for (std::size_t i = 0; i < o.data.size(); ++i) {
      gx[i] += o.grad[i] * deriv(xi.data[i], o.data[i]);
    }
  });
}

// Copies src (shape `shape`) into dst permuted so that dst axis i is src axis dims[i].
// When `accumulate` is set, adds into dst instead of overwriting.
template <typename T>
void permute_copy(const T* src, const Shape& shape, const std::vector<std::size_t>& dims,
                  T* dst, bool accumulate) {
  const std::size_t rank = shape.size();
  const auto src_strides = contiguous_strides(shape);
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = shape[dims[i]];
    stride[i] = src_strides[dims[i]];
  }
  const std::size_t n = shape_numel(shape);
  if (rank == 0) {
    if (n) dst[0] = accumulate ? dst[0] + src[0] : src[0];
    return;
  }
  const std::size_t last = out_shape[rank - 1];
  const std::size_t last_stride = stride[rank - 1];
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; i += last) {
    if (accumulate) {
      for (std::size_t j = 0; j < last; ++j) dst[i + j] += src[offset + j * last_stride];
    } else {
      for (std::size_t j = 0; j < last; ++j) dst[i + j] = src[offset + j * last_stride];
    }
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++counter[d];
      offset += stride[d];
      if (counter[d] < out_shape[d]) break;
      offset -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T z) { return -z / y; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary_op<T>(
      "add_scalar", x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T value) {
  return unary_op<T>(
      "mul_scalar", x, [value](T v) { return v * value; }, [value](T, T) { return value; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_op<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = static_cast<T>(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = static_cast<T>(0.39894228040143267794);
  return unary_op<T>(
      "gelu", x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
        const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
        return cdf + v * pdf;
      });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary_op<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary_op<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary_op<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return make_result<T>("sum", Shape{}, {total}, {x}, [](TapeNode<T>& node) {
    auto& xi = *node.inputs[0];
    const T g = node.output->grad[0];
    auto gx = grad_buffer(xi);
    for (auto& v : gx) v += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "sum_axis");
  const AxisSplit s = split_at(x.shape(), ax);
  std::vector<T> out(s.outer * s.inner, T(0));
  const T* px = x.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.len; ++l) {
      const T* row = px + (o * s.len + l) * s.inner;
      T* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += row[i];
    }
  }
  return make_result<T>("sum_axis", reduced_shape(x.shape(), ax, keepdim), std::move(out), {x},
                        [s](TapeNode<T>& node) {
                          auto& xi = *node.inputs[0];
                          T* gx = grad_buffer(xi).data();
                          const T* g = node.output->grad.data();
                          for (std::size_t o = 0; o < s.outer; ++o) {
                            for (std::size_t l = 0; l < s.len; ++l) {
                              T* dst = gx + (o * s.len + l) * s.inner;
                              const T* src = g + o * s.inner;
                              for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "mean_axis");
  if (x.shape()[ax] == 0) throw std::invalid_argument("mean_axis: empty axis");
  return mul_scalar(sum_axis(x, axis, keepdim), T(1) / static_cast<T>(x.shape()[ax]));
}

template <typename T>
Tensor<T> variance_axis(const Tensor<T>& x, int axis, bool keepdim) {
  auto centered = sub(x, mean_axis(x, axis, true));
  return mean_axis(mul(centered, centered), axis, keepdim);
}

// ---------------------------------------------------------------------------
// Softmax family

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit s = split_at(x.shape(), ax);
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      T mx = px[base];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, px[base + l * s.inner]);
      T total = 0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const T e = std::exp(px[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= total;
    }
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [s](TapeNode<T>& node) {
    auto& xi = *node.inputs[0];
    const auto& o = *node.output;
    T* gx = grad_buffer(xi).data();
    for (std::size_t oo = 0; oo < s.outer; ++oo) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = oo * s.len * s.inner + i;
        T dot = 0;
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t k = base + l * s.inner;
          dot += o.grad[k] * o.data[k];
        }
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t k = base + l * s.inner;
          gx[k] += o.data[k] * (o.grad[k] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "log_softmax");
  const AxisSplit s = split_at(x.shape(), ax);
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      T mx = px[base];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, px[base + l * s.inner]);
      T total = 0;
      for (std::size_t l = 0; l < s.len; ++l) total += std::exp(px[base + l * s.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] = px[base + l * s.inner] - lse;
    }
  }
  return make_result<T>("log_softmax", x.shape(), std::move(out), {x}, [s](TapeNode<T>& node) {
    auto& xi = *node.inputs[0];
    const auto& o = *node.output;
    T* gx = grad_buffer(xi).data();
    for (std::size_t oo = 0; oo < s.outer; ++oo) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = oo * s.len * s.inner + i;
        T gsum = 0;
        for (std::size_t l = 0; l < s.len; ++l) gsum += o.grad[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t k = base + l * s.inner;
          gx[k] += o.grad[k] - std::exp(o.data[k]) * gsum;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization and regularization

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() == 0) throw std::invalid_argument("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  const bool affine = gamma.defined();
  if (affine && (gamma.numel() != d || !beta.defined() || beta.numel() != d)) {
    throw std::invalid_argument("layer_norm: affine parameters must have length " +
                                std::to_string(d));
  }
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  std::vector<T> out(x.numel());
  const T* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = px + r * d;
    T mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (row[i] - mu) * rs;
      xhat[r * d + i] = h;
      out[r * d + i] = affine ? h * gamma.data()[i] + beta.data()[i] : h;
    }
  }
  std::vector<Tensor<T>> inputs{x};
  if (affine) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), std::move(inputs),
      [xhat = std::move(xhat), rstd = std::move(rstd), d, rows, affine](TapeNode<T>& node) {
        auto& xi = *node.inputs[0];
        const T* g = node.output->grad.data();
        const T* gam = affine ? node.inputs[1]->data.data() : nullptr;
        if (affine) {
          auto& gi = *node.inputs[1];
          auto& bi = *node.inputs[2];
          if (gi.requires_grad) {
            T* gg = grad_buffer(gi).data();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t i = 0; i < d; ++i) gg[i] += g[r * d + i] * xhat[r * d + i];
          }
          if (bi.requires_grad) {
            T* gb = grad_buffer(bi).data();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t i = 0; i < d; ++i) gb[i] += g[r * d + i];
          }
        }
        if (!xi.requires_grad) return;
        T* gx = grad_buffer(xi).data();
        const T inv_d = T(1) / static_cast<T>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dh = 0;
          T mean_dh_h = 0;
          for (std::size_t i = 0; i < d; ++i) {
            const T dh = g[r * d + i] * (affine ? gam[i] : T(1));
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * d + i];
          }
          mean_dh *= inv_d;
          mean_dh_h *= inv_d;
          for (std::size_t i = 0; i < d; ++i) {
            const T dh = g[r * d + i] * (affine ? gam[i] : T(1));
            gx[r * d + i] += rstd[r] * (dh - mean_dh - xhat[r * d + i] * mean_dh_h);
          }
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, std::mt19937_64& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? scale : T(0);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  return make_result<T>("dropout", x.shape(), std::move(out), {x},
                        [mask = std::move(mask)](TapeNode<T>& node) {
                          auto& xi = *node.inputs[0];
                          T* gx = grad_buffer(xi).data();
                          const T* g = node.output->grad.data();
                          for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += g[i] * mask[i];
                        });
}

// ---------------------------------------------------------------------------
// Matrix product

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw std::invalid_argument("matmul: operands must have rank >= 2");
  }
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape().back();
  const std::size_t k2 = b.shape()[b.rank() - 2];
  const std::size_t p = b.shape().back();
  if (k != k2) {
    throw std::invalid_argument("matmul: inner extents differ: " + shape_string(a.shape()) +
                                " x " + shape_string(b.shape()));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Broadcast plan = make_broadcast(batch_a, batch_b, "matmul");
  Shape out_shape = plan.out;
  out_shape.push_back(m);
  out_shape.push_back(p);
  std::vector<T> out(shape_numel(out_shape), T(0));

  // A rank-2 right operand folds all leading extents of `a` into one product.
  const bool flat = batch_b.empty() || shape_numel(batch_b) == 1;
  const std::size_t rows_flat = a.numel() / std::max<std::size_t>(k, 1);
  if (flat && shape_numel(plan.out) == shape_numel(batch_a)) {
    MutMap<T>(out.data(), rows_flat, p).noalias() =
        ConstMap<T>(a.data().data(), rows_flat, k) * ConstMap<T>(b.data().data(), k, p);
  } else {
    broadcast_loop(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      MutMap<T>(out.data() + i * m * p, m, p).noalias() =
          ConstMap<T>(a.data().data() + ia * m * k, m, k) *
          ConstMap<T>(b.data().data() + ib * k * p, k, p);
    });
  }
  const bool flat_path = flat && shape_numel(plan.out) == shape_numel(batch_a);
  return make_result<T>(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [plan = std::move(plan), m, k, p, flat_path, rows_flat](TapeNode<T>& node) {
        auto& ai = *node.inputs[0];
        auto& bi = *node.inputs[1];
        const T* g = node.output->grad.data();
        if (flat_path) {
          ConstMap<T> G(g, rows_flat, p);
          if (ai.requires_grad) {
            MutMap<T>(grad_buffer(ai).data(), rows_flat, k).noalias() +=
                G * ConstMap<T>(bi.data.data(), k, p).transpose();
          }
          if (bi.requires_grad) {
            MutMap<T>(grad_buffer(bi).data(), k, p).noalias() +=
                ConstMap<T>(ai.data.data(), rows_flat, k).transpose() * G;
          }
          return;
        }
        T* ga = ai.requires_grad ? grad_buffer(ai).data() : nullptr;
        T* gb = bi.requires_grad ? grad_buffer(bi).data() : nullptr;
        broadcast_loop(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          ConstMap<T> G(g + i * m * p, m, p);
          if (ga) {
            MutMap<T>(ga + ia * m * k, m, k).noalias() +=
                G * ConstMap<T>(bi.data.data() + ib * k * p, k, p).transpose();
          }
          if (gb) {
            MutMap<T>(gb + ib * k * p, k, p).noalias() +=
                ConstMap<T>(ai.data.data() + ia * m * k, m, k).transpose() * G;
          }
        });
      });
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot reshape " + shape_string(x.shape()) + " to " +
                                shape_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {x},
                        [](TapeNode<T>& node) {
                          accumulate_grad<T>(*node.inputs[0], node.output->grad);
                        });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& dims) {
  const std::size_t rank = x.rank();
  if (dims.size() != rank) throw std::invalid_argument("permute: wrong number of axes");
  std::vector<std::size_t> perm(rank);
  std::vector<bool> seen(rank, false);
  for (std::size_t i = 0; i < rank; ++i) {
    perm[i] = normalize_axis(dims[i], rank, "permute");
    if (seen[perm[i]]) throw std::invalid_argument("permute: repeated axis");
    seen[perm[i]] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.shape()[perm[i]];
  std::vector<T> out(x.numel());
  permute_copy(x.data().data(), x.shape(), perm, out.data(), false);
  std::vector<std::size_t> inverse(rank);
  for (std::size_t i = 0; i < rank; ++i) inverse[perm[i]] = i;
  return make_result<T>("permute", out_shape, std::move(out), {x},
                        [inverse, out_shape](TapeNode<T>& node) {
                          auto& xi = *node.inputs[0];
                          permute_copy(node.output->grad.data(), out_shape, inverse,
                                       grad_buffer(xi).data(), true);
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis0, int axis1) {
  std::vector<int> dims(x.rank());
  for (std::size_t i = 0; i < dims.size(); ++i) dims[i] = static_cast<int>(i);
  const std::size_t a0 = normalize_axis(axis0, x.rank(), "transpose");
  const std::size_t a1 = normalize_axis(axis1, x.rank(), "transpose");
  std::swap(dims[a0], dims[a1]);
  return permute(x, dims);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const std::size_t rank = xs[0].rank();
  const std::size_t ax = normalize_axis(axis, rank, "concat");
  Shape out_shape = xs[0].shape();
  out_shape[ax] = 0;
  for (const auto& x : xs) {
    if (x.rank() != rank) throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t i = 0; i < rank; ++i) {
      if (i != ax && x.shape()[i] != xs[0].shape()[i]) {
        throw std::invalid_argument("concat: extent mismatch on axis " + std::to_string(i));
      }
    }
    out_shape[ax] += x.shape()[ax];
  }
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> lens;
  std::size_t offset = 0;
  for (const auto& x : xs) {
    const std::size_t len = x.shape()[ax];
    lens.push_back(len);
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(x.data().data() + o * len * s.inner, len * s.inner,
                  out.data() + (o * s.len + offset) * s.inner);
    }
    offset += len;
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), xs,
                        [s, lens](TapeNode<T>& node) {
                          const T* g = node.output->grad.data();
                          std::size_t off = 0;
                          for (std::size_t j = 0; j < node.inputs.size(); ++j) {
                            auto& xi = *node.inputs[j];
                            const std::size_t len = lens[j];
                            if (xi.requires_grad) {
                              T* gx = grad_buffer(xi).data();
                              for (std::size_t o = 0; o < s.outer; ++o) {
                                const T* src = g + (o * s.len + off) * s.inner;
                                T* dst = gx + o * len * s.inner;
                                for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
                              }
                            }
                            off += len;
                          }
                        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "slice");
  if (begin > end || end > x.shape()[ax]) {
    throw std::invalid_argument("slice: range [" + std::to_string(begin) + "," +
                                std::to_string(end) + ") outside extent " +
                                std::to_string(x.shape()[ax]));
  }
  const AxisSplit s = split_at(x.shape(), ax);
  const std::size_t len = end - begin;
  Shape out_shape = x.shape();
  out_shape[ax] = len;
  std::vector<T> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.data().data() + (o * s.len + begin) * s.inner, len * s.inner,
                out.data() + o * len * s.inner);
  }
  return make_result<T>("slice", std::move(out_shape), std::move(out), {x},
                        [s, begin, len](TapeNode<T>& node) {
                          auto& xi = *node.inputs[0];
                          T* gx = grad_buffer(xi).data();
                          const T* g = node.output->grad.data();
                          for (std::size_t o = 0; o < s.outer; ++o) {
                            T* dst = gx + (o * s.len + begin) * s.inner;
                            const T* src = g + o * len * s.inner;
                            for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
                          }
                        });
}

template <typename T>
Tensor<T> index_select(const Tensor<T>& x, int axis, std::span<const std::size_t> indices) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "index_select");
  const AxisSplit s = split_at(x.shape(), ax);
  for (auto idx : indices) {
    if (idx >= s.len) throw std::invalid_argument("index_select: index out of range");
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Shape out_shape = x.shape();
  out_shape[ax] = idx.size();
  std::vector<T> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < idx.size(); ++j) {
      std::copy_n(x.data().data() + (o * s.len + idx[j]) * s.inner, s.inner,
                  out.data() + (o * idx.size() + j) * s.inner);
    }
  }
  return make_result<T>("index_select", std::move(out_shape), std::move(out), {x},
                        [s, idx = std::move(idx)](TapeNode<T>& node) {
                          auto& xi = *node.inputs[0];
                          T* gx = grad_buffer(xi).data();
                          const T* g = node.output->grad.data();
                          for (std::size_t o = 0; o < s.outer; ++o) {
                            for (std::size_t j = 0; j < idx.size(); ++j) {
                              T* dst = gx + (o * s.len + idx[j]) * s.inner;
                              const T* src = g + (o * idx.size() + j) * s.inner;
                              for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Distances

template <typename T>
Tensor<T> pairwise_euclidean(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
    throw std::invalid_argument("pairwise_euclidean: expected [B1,D] and [B2,D], got " +
                                shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const std::size_t n1 = a.shape()[0];
  const std::size_t n2 = b.shape()[0];
  const std::size_t d = a.shape()[1];
  std::vector<T> out(n1 * n2);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < n1; ++i) {
    for (std::size_t j = 0; j < n2; ++j) {
      T acc = 0;
      for (std::size_t c = 0; c < d; ++c) {
        const T diff = pa[i * d + c] - pb[j * d + c];
        acc += diff * diff;
      }
      out[i * n2 + j] = std::sqrt(acc);
    }
  }
  return make_result<T>(
      "pairwise_euclidean", Shape{n1, n2}, std::move(out), {a, b},
      [n1, n2, d](TapeNode<T>& node) {
        auto& ai = *node.inputs[0];
        auto& bi = *node.inputs[1];
        const T* g = node.output->grad.data();
        const T* dist = node.output->data.data();
        T* ga = ai.requires_grad ? grad_buffer(ai).data() : nullptr;
        T* gb = bi.requires_grad ? grad_buffer(bi).data() : nullptr;
        for (std::size_t i = 0; i < n1; ++i) {
          for (std::size_t j = 0; j < n2; ++j) {
            const T dij = dist[i * n2 + j];
            const T gij = g[i * n2 + j];
            if (dij == T(0) || gij == T(0)) continue;
            const T scale = gij / dij;
            for (std::size_t c = 0; c < d; ++c) {
              const T diff = ai.data[i * d + c] - bi.data[j * d + c];
              if (ga) ga[i * d + c] += scale * diff;
              if (gb) gb[j * d + c] -= scale * diff;
            }
          }
        }
      });
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(x.data()[i]);
  return Tensor<To>(x.shape(), std::move(out));
}

#define FSRA_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                    \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                    \
  template Tensor<T> relu(const Tensor<T>&);                                             \
  template Tensor<T> gelu(const Tensor<T>&);                                             \
  template Tensor<T> exp(const Tensor<T>&);                                              \
  template Tensor<T> log(const Tensor<T>&);                                              \
  template Tensor<T> sqrt(const Tensor<T>&);                                             \
  template Tensor<T> sum(const Tensor<T>&);                                              \
  template Tensor<T> mean(const Tensor<T>&);                                             \
  template Tensor<T> sum_axis(const Tensor<T>&, int, bool);                              \
  template Tensor<T> mean_axis(const Tensor<T>&, int, bool);                             \
  template Tensor<T> variance_axis(const Tensor<T>&, int, bool);                         \
  template Tensor<T> softmax(const Tensor<T>&, int);                                     \
  template Tensor<T> log_softmax(const Tensor<T>&, int);                                 \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T); \
  template Tensor<T> dropout(const Tensor<T>&, double, std::mt19937_64&, bool);          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                   \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                 \
  template Tensor<T> transpose(const Tensor<T>&, int, int);                              \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                         \
  template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);             \
  template Tensor<T> index_select(const Tensor<T>&, int, std::span<const std::size_t>);  \
  template Tensor<T> pairwise_euclidean(const Tensor<T>&, const Tensor<T>&);

FSRA_INSTANTIATE_OPS(float)
FSRA_INSTANTIATE_OPS(double)

template Tensor<float> cast<float, double>(const Tensor<double>&);
template Tensor<double> cast<double, float>(const Tensor<float>&);
template Tensor<float> cast<float, float>(const Tensor<float>&);
template Tensor<double> cast<double, double>(const Tensor<double>&);

}  // namespace fsra
