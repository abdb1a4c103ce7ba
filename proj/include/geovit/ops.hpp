// Copyright 2026 The geovit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Differentiable operator set.
//
// Shape rules, in brief:
//   add/sub/mul/div     a has the output shape; b is either equal, or (after
//                       left-padding with 1s) is a run of 1s, a block equal to
//                       a's dims, then a run of trailing 1s. Covers scalars,
//                       row vectors ([D] onto [N,L,D]) and per-channel
//                       columns ([C,1,1] onto [N,C,H,W]).
//   matmul              [..., m, k] x [..., k, n] -> [..., m, n]; b may be 2-D.
//   linear              [..., in] x W[out, in]^T + b[out] -> [..., out]
//   conv2d              [N,C,H,W] * [O,C,kh,kw] -> [N,O,Ho,Wo], zero padding
//   permute/reshape     data-preserving; reshape accepts one -1 extent
//   reductions          sum/mean over all elements -> [1], or over one axis
//   softmax/layernorm   along any axis
//   bilinear_resize     [N,C,H,W] -> [N,C,oh,ow]
//   grid_sample         [N,C,H,W] at absolute (x, y) pixel coordinates
//                       [N,2,Ho,Wo] -> [N,C,Ho,Wo]; pixel (i, j) sits at (j, i)

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "geovit/tensor.hpp"

namespace geovit {

enum class PadMode { Zeros, Clamp, Wrap };

namespace detail {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using MapCR = Eigen::Map<const MatR<T>>;

inline std::int64_t norm_axis(std::int64_t axis, std::int64_t rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw RankError(std::string(op) + ": axis out of range");
  return axis;
}

// Split a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::int64_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::int64_t axis) {
  AxisSplit s;
  for (std::int64_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

struct Broadcast {
  bool same = true;
  std::int64_t inner = 1;  // a-elements sharing one b element along the trailing run
  std::int64_t nb = 1;     // b extent (cycled)
};

inline Broadcast broadcast_rule(const Shape& a, const Shape& b, const char* op) {
  Broadcast r;
  if (a == b) return r;
  r.same = false;
  auto fail = [&] {
    throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(b) + " onto " + to_string(a));
  };
  if (b.size() > a.size()) fail();
  Shape bp(a.size() - b.size(), 1);
  bp.insert(bp.end(), b.begin(), b.end());
  auto i = static_cast<std::int64_t>(a.size()) - 1;
  while (i >= 0 && bp[i] == 1) r.inner *= a[i--];
  while (i >= 0 && bp[i] == a[i]) r.nb *= a[i--];
  while (i >= 0) {
    if (bp[i--] != 1) fail();
  }
  return r;
}

inline std::int64_t floor_index(double v) { return static_cast<std::int64_t>(std::floor(v)); }

inline std::int64_t resolve_index(std::int64_t i, std::int64_t n, PadMode mode) {
  if (i >= 0 && i < n) return i;
  switch (mode) {
    case PadMode::Zeros:
      return -1;
    case PadMode::Clamp:
      return i < 0 ? 0 : n - 1;
    case PadMode::Wrap:
      return ((i % n) + n) % n;
  }
  return -1;
}

template <typename T>
void permute_into(const T* in, const Shape& in_shape, const std::vector<std::int64_t>& perm, T* out,
                  bool accumulate) {
  const std::size_t r = in_shape.size();
  std::vector<std::int64_t> in_strides(r, 1);
  for (std::int64_t i = static_cast<std::int64_t>(r) - 2; i >= 0; --i)
    in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  Shape out_shape(r);
  std::vector<std::int64_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[perm[i]];
    stride[i] = in_strides[perm[i]];
  }
  const std::int64_t total = numel_of(in_shape);
  if (r == 0 || total == 0) return;
  const std::int64_t last = out_shape[r - 1];
  const std::int64_t last_stride = stride[r - 1];
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t base = 0;
  for (std::int64_t o = 0; o < total; o += last) {
    const T* src = in + base;
    T* dst = out + o;
    if (accumulate) {
      for (std::int64_t j = 0; j < last; ++j) dst[j] += src[j * last_stride];
    } else {
      for (std::int64_t j = 0; j < last; ++j) dst[j] = src[j * last_stride];
    }
    for (std::int64_t d = static_cast<std::int64_t>(r) - 2; d >= 0; --d) {
      base += stride[d];
      if (++idx[d] < out_shape[d]) break;
      base -= stride[d] * out_shape[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops

namespace detail {

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  const Broadcast bc = broadcast_rule(a.shape(), b.shape(), name);
  const auto n = a.numel();
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  std::vector<T> out(static_cast<std::size_t>(n));
  if (bc.same) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = f(pa[i], pb[i]);
  } else {
    for (std::int64_t i = 0; i < n; ++i) out[i] = f(pa[i], pb[(i / bc.inner) % bc.nb]);
  }
  auto sa = a.storage(), sb = b.storage();
  return make_op_result<T>(name, a.shape(), std::move(out), {a, b},
                           [sa, sb, bc, da, db](const Storage<T>& o, std::span<const T> g) {
                             const T* x = sa->data.data();
                             const T* y = sb->data.data();
                             const T* z = o.data.data();
                             const auto n = static_cast<std::int64_t>(g.size());
                             if (T* ga = grad_sink(sa)) {
                               for (std::int64_t i = 0; i < n; ++i) {
                                 const auto j = bc.same ? i : (i / bc.inner) % bc.nb;
                                 ga[i] += g[i] * da(x[i], y[j], z[i]);
                               }
                             }
                             if (T* gb = grad_sink(sb)) {
                               for (std::int64_t i = 0; i < n; ++i) {
                                 const auto j = bc.same ? i : (i / bc.inner) % bc.nb;
                                 gb[j] += g[i] * db(x[i], y[j], z[i]);
                               }
                             }
                           });
}

template <typename T, typename F, typename DF>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, F f, DF df) {
  const auto n = x.numel();
  const T* px = x.data().data();
  std::vector<T> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out[i] = f(px[i]);
  auto sx = x.storage();
  return make_op_result<T>(name, x.shape(), std::move(out), {x},
                           [sx, df](const Storage<T>& o, std::span<const T> g) {
                             T* gx = grad_sink(sx);
                             if (!gx) return;
                             const T* xv = sx->data.data();
                             const T* yv = o.data.data();
                             for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
                           });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  for (T v : b.data()) {
    if (v == T(0) || !std::isfinite(v)) throw DomainError("div: divisor contains zero or non-finite values");
  }
  return detail::binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T z) { return -z / y; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary_op<T>(
      "add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary_op<T>(
      "scale", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, T s) { return scale(a, s); }
template <typename T>
Tensor<T> operator*(T s, const Tensor<T>& a) { return scale(a, s); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Elementwise unary ops

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (!(v > T(0))) throw DomainError("log: input must be strictly positive");
  }
  return detail::unary_op<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (!(v >= T(0))) throw DomainError("sqrt: input must be non-negative");
  }
  return detail::unary_op<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); },
      [](T, T y) {
        if (y == T(0)) throw DomainError("sqrt: derivative undefined at 0");
        return T(0.5) / y;
      });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return detail::unary_op<T>(
      "gelu", x,
      [](T v) { return static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2))); },
      [](T v, T) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * double(v) * double(v));
        return static_cast<T>(cdf + v * pdf);
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  auto sx = x.storage();
  return make_op_result<T>("sum", {1}, {acc}, {x}, [sx](const detail::Storage<T>&, std::span<const T> g) {
    if (T* gx = grad_sink(sx)) {
      for (std::size_t i = 0; i < sx->data.size(); ++i) gx[i] += g[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::int64_t axis, bool keepdim = false) {
  axis = detail::norm_axis(axis, x.rank(), "sum");
  const auto sp = detail::split_at(x.shape(), axis);
  std::vector<T> out(static_cast<std::size_t>(sp.outer * sp.inner), T(0));
  const T* px = x.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t k = 0; k < sp.n; ++k)
      for (std::int64_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += px[(o * sp.n + k) * sp.inner + i];
  Shape shape = x.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + axis);
    if (shape.empty()) shape = {1};
  }
  auto sx = x.storage();
  return make_op_result<T>("sum_axis", shape, std::move(out), {x},
                           [sx, sp](const detail::Storage<T>&, std::span<const T> g) {
                             T* gx = grad_sink(sx);
                             if (!gx) return;
                             for (std::int64_t o = 0; o < sp.outer; ++o)
                               for (std::int64_t k = 0; k < sp.n; ++k)
                                 for (std::int64_t i = 0; i < sp.inner; ++i)
                                   gx[(o * sp.n + k) * sp.inner + i] += g[o * sp.inner + i];
                           });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::int64_t axis, bool keepdim = false) {
  return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(x.dim(axis)));
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const auto m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  const bool shared_b = b.rank() == 2;
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  if (b.dim(-2) != k || (!shared_b && batch_a != batch_b)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const auto batch = numel_of(batch_a);
  Shape out_shape = batch_a;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(static_cast<std::size_t>(batch * m * n));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::int64_t i = 0; i < batch; ++i) {
    detail::MapR<T>(out.data() + i * m * n, m, n).noalias() =
        detail::MapCR<T>(pa + i * m * k, m, k) * detail::MapCR<T>(pb + (shared_b ? 0 : i * k * n), k, n);
  }
  auto sa = a.storage(), sb = b.storage();
  return make_op_result<T>(
      "matmul", out_shape, std::move(out), {a, b},
      [sa, sb, batch, m, k, n, shared_b](const detail::Storage<T>&, std::span<const T> g) {
        T* ga = grad_sink(sa);
        T* gb = grad_sink(sb);
        for (std::int64_t i = 0; i < batch; ++i) {
          detail::MapCR<T> G(g.data() + i * m * n, m, n);
          const auto boff = shared_b ? 0 : i * k * n;
          if (ga) {
            detail::MapR<T>(ga + i * m * k, m, k).noalias() +=
                G * detail::MapCR<T>(sb->data.data() + boff, k, n).transpose();
          }
          if (gb) {
            detail::MapR<T>(gb + boff, k, n).noalias() +=
                detail::MapCR<T>(sa->data.data() + i * m * k, m, k).transpose() * G;
          }
        }
      });
}

/// x[..., in] * weight[out, in]^T + bias[out]; bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {}) {
  if (weight.rank() != 2 || x.dim(-1) != weight.dim(1)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(weight.shape()));
  }
  const auto in = weight.dim(1), outf = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match " + std::to_string(outf));
  }
  const auto rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outf;
  std::vector<T> out(static_cast<std::size_t>(rows * outf));
  detail::MapR<T> Y(out.data(), rows, outf);
  Y.noalias() = detail::MapCR<T>(x.data().data(), rows, in) *
                detail::MapCR<T>(weight.data().data(), outf, in).transpose();
  if (bias.defined()) {
    const T* pb = bias.data().data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < outf; ++c) out[r * outf + c] += pb[c];
  }
  auto sx = x.storage(), sw = weight.storage();
  auto sb = bias.defined() ? bias.storage() : nullptr;
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result<T>(
      "linear", out_shape, std::move(out), inputs,
      [sx, sw, sb, rows, in, outf](const detail::Storage<T>&, std::span<const T> g) {
        detail::MapCR<T> G(g.data(), rows, outf);
        if (T* gx = grad_sink(sx)) {
          detail::MapR<T>(gx, rows, in).noalias() += G * detail::MapCR<T>(sw->data.data(), outf, in);
        }
        if (T* gw = grad_sink(sw)) {
          detail::MapR<T>(gw, outf, in).noalias() += G.transpose() * detail::MapCR<T>(sx->data.data(), rows, in);
        }
        if (sb) {
          if (T* gb = grad_sink(sb)) {
            for (std::int64_t r = 0; r < rows; ++r)
              for (std::int64_t c = 0; c < outf; ++c) gb[c] += g[r * outf + c];
          }
        }
      });
}

struct Conv2dParams {
  std::int64_t stride_h = 1, stride_w = 1;
  std::int64_t pad_h = 0, pad_w = 0;
};

/// 2-D cross-correlation with zero padding, lowered to one GEMM over the batch.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {},
                 Conv2dParams p = {}) {
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " incompatible with kernel " +
                     to_string(weight.shape()));
  }
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto O = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O)) {
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match " + std::to_string(O));
  }
  if (p.stride_h <= 0 || p.stride_w <= 0 || p.pad_h < 0 || p.pad_w < 0) {
    throw ShapeError("conv2d: strides must be positive and padding non-negative");
  }
  const auto Ho = (H + 2 * p.pad_h - KH) / p.stride_h + 1;
  const auto Wo = (W + 2 * p.pad_w - KW) / p.stride_w + 1;
  if (H + 2 * p.pad_h < KH || W + 2 * p.pad_w < KW) {
    throw ShapeError("conv2d: kernel " + to_string(weight.shape()) + " larger than padded input " +
                     to_string(x.shape()));
  }
  const auto P = Ho * Wo;
  const auto K = C * KH * KW;
  const auto cols = N * P;

  auto col = std::make_shared<std::vector<T>>(static_cast<std::size_t>(K * cols), T(0));
  const T* px = x.data().data();
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t i = 0; i < KH; ++i)
      for (std::int64_t j = 0; j < KW; ++j) {
        T* row = col->data() + ((c * KH + i) * KW + j) * cols;
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t oy = 0; oy < Ho; ++oy) {
            const auto iy = oy * p.stride_h - p.pad_h + i;
            if (iy < 0 || iy >= H) continue;
            const T* src = px + ((n * C + c) * H + iy) * W;
            T* dst = row + n * P + oy * Wo;
            for (std::int64_t ox = 0; ox < Wo; ++ox) {
              const auto ix = ox * p.stride_w - p.pad_w + j;
              if (ix >= 0 && ix < W) dst[ox] = src[ix];
            }
          }
      }

  std::vector<T> res(static_cast<std::size_t>(O * cols));
  detail::MapR<T>(res.data(), O, cols).noalias() =
      detail::MapCR<T>(weight.data().data(), O, K) * detail::MapCR<T>(col->data(), K, cols);
  std::vector<T> out(static_cast<std::size_t>(N * O * P));
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t o = 0; o < O; ++o) {
      const T b = bias.defined() ? bias.data()[o] : T(0);
      const T* src = res.data() + o * cols + n * P;
      T* dst = out.data() + (n * O + o) * P;
      for (std::int64_t q = 0; q < P; ++q) dst[q] = src[q] + b;
    }

  auto sx = x.storage(), sw = weight.storage();
  auto sb = bias.defined() ? bias.storage() : nullptr;
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result<T>(
      "conv2d", {N, O, Ho, Wo}, std::move(out), inputs,
      [sx, sw, sb, col, p, N, C, H, W, O, KH, KW, Ho, Wo, P, K, cols](const detail::Storage<T>&,
                                                                      std::span<const T> g) {
        std::vector<T> gm(static_cast<std::size_t>(O * cols));
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t o = 0; o < O; ++o)
            std::copy_n(g.data() + (n * O + o) * P, P, gm.data() + o * cols + n * P);
        detail::MapCR<T> G(gm.data(), O, cols);
        if (sb) {
          if (T* gb = grad_sink(sb)) {
            for (std::int64_t o = 0; o < O; ++o) {
              T acc = T(0);
              for (std::int64_t q = 0; q < cols; ++q) acc += gm[o * cols + q];
              gb[o] += acc;
            }
          }
        }
        if (T* gw = grad_sink(sw)) {
          detail::MapR<T>(gw, O, K).noalias() += G * detail::MapCR<T>(col->data(), K, cols).transpose();
        }
        if (T* gx = grad_sink(sx)) {
          std::vector<T> gcol(static_cast<std::size_t>(K * cols));
          detail::MapR<T>(gcol.data(), K, cols).noalias() =
              detail::MapCR<T>(sw->data.data(), O, K).transpose() * G;
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < KH; ++i)
              for (std::int64_t j = 0; j < KW; ++j) {
                const T* row = gcol.data() + ((c * KH + i) * KW + j) * cols;
                for (std::int64_t n = 0; n < N; ++n)
                  for (std::int64_t oy = 0; oy < Ho; ++oy) {
                    const auto iy = oy * p.stride_h - p.pad_h + i;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = gx + ((n * C + c) * H + iy) * W;
                    const T* src = row + n * P + oy * Wo;
                    for (std::int64_t ox = 0; ox < Wo; ++ox) {
                      const auto ix = ox * p.stride_w - p.pad_w + j;
                      if (ix >= 0 && ix < W) dst[ix] += src[ox];
                    }
                  }
              }
        }
      });
}

// ---------------------------------------------------------------------------
// Layout ops

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::int64_t>& perm) {
  const auto r = x.rank();
  if (static_cast<std::int64_t>(perm.size()) != r) throw RankError("permute: permutation rank mismatch");
  std::vector<bool> used(r, false);
  for (auto v : perm) {
    if (v < 0 || v >= r || used[v]) throw RankError("permute: invalid permutation");
    used[v] = true;
  }
  Shape out_shape(r);
  std::vector<std::int64_t> inverse(r);
  for (std::int64_t i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[perm[i]];
    inverse[perm[i]] = i;
  }
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  detail::permute_into(x.data().data(), x.shape(), perm, out.data(), false);
  auto sx = x.storage();
  return make_op_result<T>("permute", out_shape, std::move(out), {x},
                           [sx, inverse, out_shape](const detail::Storage<T>&, std::span<const T> g) {
                             if (T* gx = grad_sink(sx)) detail::permute_into(g.data(), out_shape, inverse, gx, true);
                           });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::int64_t a, std::int64_t b) {
  a = detail::norm_axis(a, x.rank(), "transpose");
  b = detail::norm_axis(b, x.rank(), "transpose");
  std::vector<std::int64_t> perm(x.rank());
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[a], perm[b]);
  return permute(x, perm);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  std::int64_t known = 1, infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one -1 extent");
      infer = static_cast<std::int64_t>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0 && x.numel() % known == 0) shape[infer] = x.numel() / known;
  if (numel_of(shape) != x.numel() || (infer >= 0 && shape[infer] <= 0)) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  auto sx = x.storage();
  return make_op_result<T>("reshape", shape, x.vec(), {x}, [sx](const detail::Storage<T>&, std::span<const T> g) {
    if (T* gx = grad_sink(sx)) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::int64_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  axis = detail::norm_axis(axis, xs[0].rank(), "concat");
  Shape shape = xs[0].shape();
  std::int64_t total = 0;
  for (const auto& t : xs) {
    Shape s = t.shape();
    if (s.size() != shape.size()) throw ShapeError("concat: rank mismatch " + to_string(s) + " vs " + to_string(shape));
    s[axis] = shape[axis];
    if (s != shape) throw ShapeError("concat: shape mismatch " + to_string(t.shape()) + " vs " + to_string(xs[0].shape()));
    total += t.dim(axis);
  }
  shape[axis] = total;
  const auto sp = detail::split_at(shape, axis);
  std::vector<T> out(static_cast<std::size_t>(numel_of(shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const auto len = t.dim(axis) * sp.inner;
    const T* src = t.data().data();
    for (std::int64_t o = 0; o < sp.outer; ++o)
      std::copy_n(src + o * len, len, out.data() + o * sp.n * sp.inner + off * sp.inner);
    off += t.dim(axis);
  }
  std::vector<std::shared_ptr<detail::Storage<T>>> ss;
  std::vector<std::int64_t> lens;
  for (const auto& t : xs) {
    ss.push_back(t.storage());
    lens.push_back(t.dim(axis));
  }
  return make_op_result<T>("concat", shape, std::move(out), xs,
                           [ss, lens, offsets, sp](const detail::Storage<T>&, std::span<const T> g) {
                             for (std::size_t k = 0; k < ss.size(); ++k) {
                               T* gk = grad_sink(ss[k]);
                               if (!gk) continue;
                               const auto len = lens[k] * sp.inner;
                               for (std::int64_t o = 0; o < sp.outer; ++o) {
                                 const T* src = g.data() + o * sp.n * sp.inner + offsets[k] * sp.inner;
                                 for (std::int64_t i = 0; i < len; ++i) gk[o * len + i] += src[i];
                               }
                             }
                           });
}

/// Elements [start, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::int64_t axis, std::int64_t start, std::int64_t end) {
  axis = detail::norm_axis(axis, x.rank(), "slice");
  const auto sp = detail::split_at(x.shape(), axis);
  if (start < 0 || end > sp.n || start >= end) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(end) +
                     ") invalid for extent " + std::to_string(sp.n));
  }
  const auto len = end - start;
  Shape shape = x.shape();
  shape[axis] = len;
  std::vector<T> out(static_cast<std::size_t>(sp.outer * len * sp.inner));
  const T* px = x.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o)
    std::copy_n(px + (o * sp.n + start) * sp.inner, len * sp.inner, out.data() + o * len * sp.inner);
  auto sx = x.storage();
  return make_op_result<T>("slice", shape, std::move(out), {x},
                           [sx, sp, start, len](const detail::Storage<T>&, std::span<const T> g) {
                             T* gx = grad_sink(sx);
                             if (!gx) return;
                             for (std::int64_t o = 0; o < sp.outer; ++o) {
                               T* dst = gx + (o * sp.n + start) * sp.inner;
                               const T* src = g.data() + o * len * sp.inner;
                               for (std::int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
                             }
                           });
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, const std::vector<std::int64_t>& sizes, std::int64_t axis) {
  axis = detail::norm_axis(axis, x.rank(), "split");
  std::int64_t total = 0;
  for (auto s : sizes) total += s;
  if (total != x.dim(axis)) {
    throw ShapeError("split: sizes sum to " + std::to_string(total) + " but extent is " + std::to_string(x.dim(axis)));
  }
  std::vector<Tensor<T>> parts;
  std::int64_t start = 0;
  for (auto s : sizes) {
    parts.push_back(slice(x, axis, start, start + s));
    start += s;
  }
  return parts;
}

/// Rows of `table` [V, D] selected by `indices` -> [n, D].
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int64_t> indices) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be 2-D, got " + to_string(table.shape()));
  const auto V = table.dim(0), D = table.dim(1);
  const auto n = static_cast<std::int64_t>(indices.size());
  if (n == 0) throw ShapeError("embedding_lookup: empty index list");
  std::vector<T> out(static_cast<std::size_t>(n * D));
  for (std::int64_t i = 0; i < n; ++i) {
    if (indices[i] < 0 || indices[i] >= V) throw ShapeError("embedding_lookup: index out of range");
    std::copy_n(table.data().data() + indices[i] * D, D, out.data() + i * D);
  }
  auto st = table.storage();
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  return make_op_result<T>("embedding_lookup", {n, D}, std::move(out), {table},
                           [st, idx, D](const detail::Storage<T>&, std::span<const T> g) {
                             T* gt = grad_sink(st);
                             if (!gt) return;
                             for (std::size_t i = 0; i < idx.size(); ++i)
                               for (std::int64_t d = 0; d < D; ++d) gt[idx[i] * D + d] += g[i * D + d];
                           });
}

/// Pads the two trailing axes.
template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, std::int64_t top, std::int64_t bottom, std::int64_t left, std::int64_t right,
                PadMode mode = PadMode::Zeros) {
  if (x.rank() < 2) throw RankError("pad2d: need rank >= 2");
  if (top < 0 || bottom < 0 || left < 0 || right < 0) throw ShapeError("pad2d: negative padding");
  const auto H = x.dim(-2), W = x.dim(-1);
  const auto planes = x.numel() / (H * W);
  const auto OH = H + top + bottom, OW = W + left + right;
  Shape shape = x.shape();
  shape[shape.size() - 2] = OH;
  shape[shape.size() - 1] = OW;
  // source index for every output position (-1 = zero)
  std::vector<std::int64_t> src(static_cast<std::size_t>(OH * OW));
  for (std::int64_t y = 0; y < OH; ++y)
    for (std::int64_t xx = 0; xx < OW; ++xx) {
      const auto iy = detail::resolve_index(y - top, H, mode);
      const auto ix = detail::resolve_index(xx - left, W, mode);
      src[y * OW + xx] = (iy < 0 || ix < 0) ? -1 : iy * W + ix;
    }
  std::vector<T> out(static_cast<std::size_t>(planes * OH * OW), T(0));
  const T* px = x.data().data();
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t q = 0; q < OH * OW; ++q)
      if (src[q] >= 0) out[p * OH * OW + q] = px[p * H * W + src[q]];
  auto sx = x.storage();
  return make_op_result<T>("pad2d", shape, std::move(out), {x},
                           [sx, src, planes, H, W, OH, OW](const detail::Storage<T>&, std::span<const T> g) {
                             T* gx = grad_sink(sx);
                             if (!gx) return;
                             for (std::int64_t p = 0; p < planes; ++p)
                               for (std::int64_t q = 0; q < OH * OW; ++q)
                                 if (src[q] >= 0) gx[p * H * W + src[q]] += g[p * OH * OW + q];
                           });
}

// ---------------------------------------------------------------------------
// Normalization

/// Numerically stable softmax (max-subtracted) along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::int64_t axis) {
  axis = detail::norm_axis(axis, x.rank(), "softmax");
  const auto sp = detail::split_at(x.shape(), axis);
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* px = x.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      const auto base = o * sp.n * sp.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t k = 0; k < sp.n; ++k) mx = std::max(mx, px[base + k * sp.inner]);
      T total = T(0);
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const T e = std::exp(px[base + k * sp.inner] - mx);
        out[base + k * sp.inner] = e;
        total += e;
      }
      for (std::int64_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] /= total;
    }
  auto sx = x.storage();
  return make_op_result<T>("softmax", x.shape(), std::move(out), {x},
                           [sx, sp](const detail::Storage<T>& o, std::span<const T> g) {
                             T* gx = grad_sink(sx);
                             if (!gx) return;
                             const T* y = o.data.data();
                             for (std::int64_t oo = 0; oo < sp.outer; ++oo)
                               for (std::int64_t i = 0; i < sp.inner; ++i) {
                                 const auto base = oo * sp.n * sp.inner + i;
                                 T dot = T(0);
                                 for (std::int64_t k = 0; k < sp.n; ++k)
                                   dot += g[base + k * sp.inner] * y[base + k * sp.inner];
                                 for (std::int64_t k = 0; k < sp.n; ++k) {
                                   const auto j = base + k * sp.inner;
                                   gx[j] += y[j] * (g[j] - dot);
                                 }
                               }
                           });
}

/// Layer normalization along `axis`; weight/bias (extent of that axis) are optional.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, std::int64_t axis, T eps, const Tensor<T>& weight = {},
                    const Tensor<T>& bias = {}) {
  axis = detail::norm_axis(axis, x.rank(), "layernorm");
  const auto sp = detail::split_at(x.shape(), axis);
  for (const Tensor<T>* p : {&weight, &bias}) {
    if (p->defined() && (p->rank() != 1 || p->dim(0) != sp.n)) {
      throw ShapeError("layernorm: affine parameter " + to_string(p->shape()) + " does not match extent " +
                       std::to_string(sp.n));
    }
  }
  if (!(eps > T(0))) throw DomainError("layernorm: eps must be positive");
  const auto groups = sp.outer * sp.inner;
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(groups));
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* px = x.data().data();
  const T* pw = weight.defined() ? weight.data().data() : nullptr;
  const T* pb = bias.defined() ? bias.data().data() : nullptr;
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      const auto base = o * sp.n * sp.inner + i;
      T mu = T(0);
      for (std::int64_t k = 0; k < sp.n; ++k) mu += px[base + k * sp.inner];
      mu /= static_cast<T>(sp.n);
      T var = T(0);
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const T d = px[base + k * sp.inner] - mu;
        var += d * d;
      }
      var /= static_cast<T>(sp.n);
      const T is = T(1) / std::sqrt(var + eps);
      (*inv_std)[o * sp.inner + i] = is;
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const auto j = base + k * sp.inner;
        const T h = (px[j] - mu) * is;
        (*xhat)[j] = h;
        out[j] = (pw ? h * pw[k] : h) + (pb ? pb[k] : T(0));
      }
    }
  auto sx = x.storage();
  auto sw = weight.defined() ? weight.storage() : nullptr;
  auto sb = bias.defined() ? bias.storage() : nullptr;
  std::vector<Tensor<T>> inputs{x};
  if (weight.defined()) inputs.push_back(weight);
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result<T>(
      "layernorm", x.shape(), std::move(out), inputs,
      [sx, sw, sb, sp, xhat, inv_std](const detail::Storage<T>&, std::span<const T> g) {
        const T* h = xhat->data();
        const T* w = sw ? sw->data.data() : nullptr;
        if (sw) {
          if (T* gw = grad_sink(sw)) {
            for (std::int64_t o = 0; o < sp.outer; ++o)
              for (std::int64_t k = 0; k < sp.n; ++k)
                for (std::int64_t i = 0; i < sp.inner; ++i) {
                  const auto j = (o * sp.n + k) * sp.inner + i;
                  gw[k] += g[j] * h[j];
                }
          }
        }
        if (sb) {
          if (T* gb = grad_sink(sb)) {
            for (std::int64_t o = 0; o < sp.outer; ++o)
              for (std::int64_t k = 0; k < sp.n; ++k)
                for (std::int64_t i = 0; i < sp.inner; ++i) gb[k] += g[(o * sp.n + k) * sp.inner + i];
          }
        }
        T* gx = grad_sink(sx);
        if (!gx) return;
        const T inv_n = T(1) / static_cast<T>(sp.n);
        for (std::int64_t o = 0; o < sp.outer; ++o)
          for (std::int64_t i = 0; i < sp.inner; ++i) {
            const auto base = o * sp.n * sp.inner + i;
            T m1 = T(0), m2 = T(0);
            for (std::int64_t k = 0; k < sp.n; ++k) {
              const auto j = base + k * sp.inner;
              const T gh = w ? g[j] * w[k] : g[j];
              m1 += gh;
              m2 += gh * h[j];
            }
            m1 *= inv_n;
            m2 *= inv_n;
            const T is = (*inv_std)[o * sp.inner + i];
            for (std::int64_t k = 0; k < sp.n; ++k) {
              const auto j = base + k * sp.inner;
              const T gh = w ? g[j] * w[k] : g[j];
              gx[j] += is * (gh - m1 - h[j] * m2);
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Resampling

/// Bilinear resize of the two trailing axes of [N, C, H, W].
/// align_corners=false uses half-pixel centers (src = (dst + 0.5) * in/out - 0.5).
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w, bool align_corners = false) {
  if (x.rank() != 4) throw RankError("bilinear_resize: expected [N, C, H, W], got " + to_string(x.shape()));
  if (out_h <= 0 || out_w <= 0) throw ShapeError("bilinear_resize: output size must be positive");
  const auto H = x.dim(2), W = x.dim(3);
  const auto planes = x.dim(0) * x.dim(1);
  struct Tap {
    std::int64_t i0, i1;
    T w0, w1;
  };
  auto taps = [align_corners](std::int64_t in, std::int64_t out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    for (std::int64_t d = 0; d < out; ++d) {
      double s;
      if (align_corners) {
        s = out > 1 ? static_cast<double>(d) * static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
      } else {
        s = (static_cast<double>(d) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
        if (s < 0) s = 0;
      }
      auto i0 = std::min<std::int64_t>(detail::floor_index(s), in - 1);
      auto i1 = std::min<std::int64_t>(i0 + 1, in - 1);
      const T l = static_cast<T>(s - static_cast<double>(i0));
      t[d] = {i0, i1, T(1) - l, l};
    }
    return t;
  };
  const auto ty = taps(H, out_h), tx = taps(W, out_w);
  std::vector<T> out(static_cast<std::size_t>(planes * out_h * out_w));
  const T* px = x.data().data();
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = px + p * H * W;
    T* dst = out.data() + p * out_h * out_w;
    for (std::int64_t y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (std::int64_t xx = 0; xx < out_w; ++xx) {
        const auto& b = tx[xx];
        dst[y * out_w + xx] = a.w0 * (b.w0 * src[a.i0 * W + b.i0] + b.w1 * src[a.i0 * W + b.i1]) +
                              a.w1 * (b.w0 * src[a.i1 * W + b.i0] + b.w1 * src[a.i1 * W + b.i1]);
      }
    }
  }
  auto sx = x.storage();
  return make_op_result<T>("bilinear_resize", {x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {x},
                           [sx, ty, tx, planes, H, W, out_h, out_w](const detail::Storage<T>&, std::span<const T> g) {
                             T* gx = grad_sink(sx);
                             if (!gx) return;
                             for (std::int64_t p = 0; p < planes; ++p) {
                               T* dst = gx + p * H * W;
                               const T* gp = g.data() + p * out_h * out_w;
                               for (std::int64_t y = 0; y < out_h; ++y) {
                                 const auto& a = ty[y];
                                 for (std::int64_t xx = 0; xx < out_w; ++xx) {
                                   const auto& b = tx[xx];
                                   const T v = gp[y * out_w + xx];
                                   dst[a.i0 * W + b.i0] += v * a.w0 * b.w0;
                                   dst[a.i0 * W + b.i1] += v * a.w0 * b.w1;
                                   dst[a.i1 * W + b.i0] += v * a.w1 * b.w0;
                                   dst[a.i1 * W + b.i1] += v * a.w1 * b.w1;
                                 }
                               }
                             }
                           });
}

/// Bilinear sampling of image [N, C, H, W] at absolute pixel coordinates
/// coords [N, 2, Ho, Wo] (channel 0 = x/column, channel 1 = y/row).
/// Differentiable with respect to both the image and the coordinates.
template <typename T>
Tensor<T> grid_sample(const Tensor<T>& image, const Tensor<T>& coords, PadMode mode = PadMode::Clamp) {
  if (image.rank() != 4 || coords.rank() != 4 || coords.dim(1) != 2 || coords.dim(0) != image.dim(0)) {
    throw ShapeError("grid_sample: image " + to_string(image.shape()) + " incompatible with coords " +
                     to_string(coords.shape()));
  }
  const auto N = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
  const auto Ho = coords.dim(2), Wo = coords.dim(3), P = Ho * Wo;
  std::vector<T> out(static_cast<std::size_t>(N * C * P));
  const T* img = image.data().data();
  const T* cp = coords.data().data();

  auto corners = [W, H, mode](T x, T y, std::int64_t idx[4], T w[4], T& fx, T& fy) {
    const auto x0 = detail::floor_index(x), y0 = detail::floor_index(y);
    fx = x - static_cast<T>(x0);
    fy = y - static_cast<T>(y0);
    const auto cx0 = detail::resolve_index(x0, W, mode), cx1 = detail::resolve_index(x0 + 1, W, mode);
    const auto cy0 = detail::resolve_index(y0, H, mode), cy1 = detail::resolve_index(y0 + 1, H, mode);
    idx[0] = (cy0 < 0 || cx0 < 0) ? -1 : cy0 * W + cx0;
    idx[1] = (cy0 < 0 || cx1 < 0) ? -1 : cy0 * W + cx1;
    idx[2] = (cy1 < 0 || cx0 < 0) ? -1 : cy1 * W + cx0;
    idx[3] = (cy1 < 0 || cx1 < 0) ? -1 : cy1 * W + cx1;
    w[0] = (T(1) - fx) * (T(1) - fy);
    w[1] = fx * (T(1) - fy);
    w[2] = (T(1) - fx) * fy;
    w[3] = fx * fy;
  };

  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t q = 0; q < P; ++q) {
      const T x = cp[(n * 2 + 0) * P + q], y = cp[(n * 2 + 1) * P + q];
      std::int64_t idx[4];
      T w[4], fx, fy;
      corners(x, y, idx, w, fx, fy);
      for (std::int64_t c = 0; c < C; ++c) {
        const T* plane = img + (n * C + c) * H * W;
        T v = T(0);
        for (int k = 0; k < 4; ++k)
          if (idx[k] >= 0) v += w[k] * plane[idx[k]];
        out[(n * C + c) * P + q] = v;
      }
    }

  auto si = image.storage(), sc = coords.storage();
  return make_op_result<T>(
      "grid_sample", {N, C, Ho, Wo}, std::move(out), {image, coords},
      [si, sc, corners, N, C, H, W, P](const detail::Storage<T>&, std::span<const T> g) mutable {
        T* gi = grad_sink(si);
        T* gc = grad_sink(sc);
        const T* img = si->data.data();
        const T* cp = sc->data.data();
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t q = 0; q < P; ++q) {
            const T x = cp[(n * 2 + 0) * P + q], y = cp[(n * 2 + 1) * P + q];
            std::int64_t idx[4];
            T w[4], fx, fy;
            corners(x, y, idx, w, fx, fy);
            T gx = T(0), gy = T(0);
            for (std::int64_t c = 0; c < C; ++c) {
              const T go = g[(n * C + c) * P + q];
              const T* plane = img + (n * C + c) * H * W;
              T v[4];
              for (int k = 0; k < 4; ++k) v[k] = idx[k] >= 0 ? plane[idx[k]] : T(0);
              if (gi) {
                T* gplane = gi + (n * C + c) * H * W;
                for (int k = 0; k < 4; ++k)
                  if (idx[k] >= 0) gplane[idx[k]] += go * w[k];
              }
              gx += go * ((T(1) - fy) * (v[1] - v[0]) + fy * (v[3] - v[2]));
              gy += go * ((T(1) - fx) * (v[2] - v[0]) + fx * (v[3] - v[1]));
            }
            if (gc) {
              gc[(n * 2 + 0) * P + q] += gx;
              gc[(n * 2 + 1) * P + q] += gy;
            }
          }
      });
}

}  // namespace geovit
