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

// Dense geometric fields, backward warping and two-view camera geometry.
//
// Conventions: flow channel 0 is u (positive right), channel 1 is v (positive
// down). Disparity is stored non-negative; the matching pixel in the target
// (right) view sits at x - d, so its flow embedding is (-d, 0).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "geovit/ops.hpp"

namespace geovit {

enum class FieldKind { Flow, Disparity, Depth };

inline const char* field_kind_name(FieldKind k) {
  switch (k) {
    case FieldKind::Flow: return "flow";
    case FieldKind::Disparity: return "disparity";
    case FieldKind::Depth: return "depth";
  }
  return "?";
}

inline std::int64_t field_channels(FieldKind k) { return k == FieldKind::Flow ? 2 : 1; }

template <typename T>
struct GeoField {
  FieldKind kind = FieldKind::Flow;
  Tensor<T> data;                   // [c, H, W]
  std::vector<std::uint8_t> valid;  // H*W; empty means every pixel is valid

  GeoField() = default;
  GeoField(FieldKind k, Tensor<T> d, std::vector<std::uint8_t> v = {}) : kind(k), data(std::move(d)), valid(std::move(v)) {
    validate();
  }

  std::int64_t channels() const { return data.dim(0); }
  std::int64_t height() const { return data.dim(1); }
  std::int64_t width() const { return data.dim(2); }
  std::int64_t pixels() const { return height() * width(); }
  bool is_valid(std::int64_t i) const { return valid.empty() || valid[static_cast<std::size_t>(i)] != 0; }

  /// The mask with the implicit all-valid case materialized.
  std::vector<std::uint8_t> mask() const {
    return valid.empty() ? std::vector<std::uint8_t>(static_cast<std::size_t>(pixels()), 1) : valid;
  }

  void validate() const {
    if (!data.defined() || data.rank() != 3 || data.dim(0) != field_channels(kind)) {
      throw ShapeError(std::string("GeoField(") + field_kind_name(kind) + "): expected [" +
                       std::to_string(field_channels(kind)) + ", H, W], got " +
                       (data.defined() ? to_string(data.shape()) : "undefined"));
    }
    if (!valid.empty() && static_cast<std::int64_t>(valid.size()) != pixels()) {
      throw ShapeError("GeoField: mask size " + std::to_string(valid.size()) + " != " + std::to_string(pixels()));
    }
    if (kind == FieldKind::Flow) return;
    for (std::int64_t i = 0; i < pixels(); ++i) {
      if (!is_valid(i)) continue;
      const T v = data[i];
      if (kind == FieldKind::Disparity && !(v >= T(0))) throw DomainError("GeoField: negative disparity");
      if (kind == FieldKind::Depth && !(v > T(0))) throw DomainError("GeoField: non-positive depth");
    }
  }
};

/// Intrinsics and relative pose (source camera frame -> target camera frame).
struct CameraPair {
  Eigen::Matrix3d K_src = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d K_tgt = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  static Eigen::Matrix3d intrinsics(double fx, double fy, double cx, double cy) {
    Eigen::Matrix3d K;
    K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return K;
  }

  /// Horizontal stereo rig: identical intrinsics, target camera `baseline` to the right.
  static CameraPair rectified(double fx, double fy, double cx, double cy, double baseline) {
    CameraPair c;
    c.K_src = c.K_tgt = intrinsics(fx, fy, cx, cy);
    c.t = Eigen::Vector3d(-baseline, 0, 0);
    return c;
  }

  void validate() const {
    const double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (!(ortho < 1e-6) || !(std::abs(R.determinant() - 1.0) < 1e-6)) {
      throw ParamError("CameraPair: R is not a rotation");
    }
    for (const auto* K : {&K_src, &K_tgt}) {
      if (!((*K)(0, 0) > 0) || !((*K)(1, 1) > 0)) throw ParamError("CameraPair: focal lengths must be positive");
    }
  }
};

namespace detail {

// Absolute sampling grid [2, H, W]: channel 0 holds x, channel 1 holds y.
template <typename T>
Tensor<T> pixel_grid(std::int64_t H, std::int64_t W) {
  std::vector<T> g(static_cast<std::size_t>(2 * H * W));
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      g[y * W + x] = static_cast<T>(x);
      g[H * W + y * W + x] = static_cast<T>(y);
    }
  return Tensor<T>({2, H, W}, std::move(g));
}

}  // namespace detail

/// Backward warp: out(x, y) = image(x + u, y + v), bilinear.
/// image [C, H, W] with flow [2, H, W], or batched [N, C, H, W] with [N, 2, H, W].
template <typename T>
Tensor<T> warp(const Tensor<T>& image, const Tensor<T>& flow, PadMode pad = PadMode::Clamp) {
  if (image.rank() == 3 && flow.rank() == 3) {
    auto out = warp(reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)}),
                    reshape(flow, {1, 2, flow.dim(1), flow.dim(2)}), pad);
    return reshape(out, image.shape());
  }
  if (image.rank() != 4 || flow.rank() != 4 || flow.dim(0) != image.dim(0) || flow.dim(1) != 2 ||
      flow.dim(2) != image.dim(2) || flow.dim(3) != image.dim(3)) {
    throw ShapeError("warp: image " + to_string(image.shape()) + " and flow " + to_string(flow.shape()) +
                     " disagree");
  }
  auto coords = add(flow, detail::pixel_grid<T>(image.dim(2), image.dim(3)));
  return grid_sample(image, coords, pad);
}

/// (-d, 0) from a [1, H, W] or [N, 1, H, W] disparity map.
template <typename T>
Tensor<T> disparity_embed(const Tensor<T>& d) {
  const std::int64_t axis = d.rank() - 3;
  if ((d.rank() != 3 && d.rank() != 4) || d.dim(axis) != 1) {
    throw ShapeError("disparity_embed: expected one channel, got " + to_string(d.shape()));
  }
  return concat<T>({neg(d), Tensor<T>::zeros(d.shape())}, axis);
}

template <typename T>
Tensor<T> warp(const Tensor<T>& image, const GeoField<T>& field, PadMode pad = PadMode::Clamp) {
  if (field.kind == FieldKind::Depth) throw ShapeError("warp: depth fields must be converted to displacement first");
  return warp(image, field.kind == FieldKind::Flow ? field.data : disparity_embed(field.data), pad);
}

template <typename T>
GeoField<T> disparity_embed(const GeoField<T>& d) {
  if (d.kind != FieldKind::Disparity) throw ShapeError("disparity_embed: field is not a disparity");
  NoGradGuard guard;
  return GeoField<T>(FieldKind::Flow, disparity_embed(d.data).detach(), d.valid);
}

/// Flow induced by a depth map under the camera pair. Pixels that land behind
/// the target camera (or carry invalid depth) are marked invalid and get zero flow.
template <typename T>
GeoField<T> depth_to_displacement(const GeoField<T>& depth, const CameraPair& cams) {
  if (depth.kind != FieldKind::Depth) throw ShapeError("depth_to_displacement: field is not a depth map");
  const auto H = depth.height(), W = depth.width(), P = H * W;
  const Eigen::Matrix3d M = cams.K_tgt * cams.R * cams.K_src.inverse();
  const Eigen::Vector3d b = cams.K_tgt * cams.t;
  std::vector<T> out(static_cast<std::size_t>(2 * P), T(0));
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(P), 0);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const auto i = y * W + x;
      const double d = static_cast<double>(depth.data[i]);
      if (!depth.is_valid(i) || !(d > 0)) continue;
      const Eigen::Vector3d q = d * (M * Eigen::Vector3d(x, y, 1.0)) + b;
      if (!(q.z() > 0)) continue;
      out[i] = static_cast<T>(q.x() / q.z() - x);
      out[P + i] = static_cast<T>(q.y() / q.z() - y);
      valid[i] = 1;
    }
  return GeoField<T>(FieldKind::Flow, Tensor<T>({2, H, W}, std::move(out)), std::move(valid));
}

namespace detail {

// With a = K_tgt R K_src^-1 p~ and b = K_tgt t, the target pixel (x', y') of a
// source pixel at depth d satisfies c_k d = e_k with
//   c1 = x' a_z - a_x, e1 = b_x - x' b_z, c2 = y' a_z - a_y, e2 = b_y - y' b_z.
struct EpipolarCoeffs {
  double c1, e1, c2, e2;
};

inline EpipolarCoeffs epipolar_coeffs(const Eigen::Matrix3d& M, const Eigen::Vector3d& b, double x, double y,
                                      double xt, double yt) {
  const Eigen::Vector3d a = M * Eigen::Vector3d(x, y, 1.0);
  return {xt * a.z() - a.x(), b.x() - xt * b.z(), yt * a.z() - a.y(), b.y() - yt * b.z()};
}

// The algebraic solution weights each residual by the target-frame depth.
// A few Gauss-Newton steps on the pixel distance move it to the closest point
// of the epipolar curve (a no-op when the observation lies on the curve).
inline double refine_epipolar_depth(const Eigen::Matrix3d& M, const Eigen::Vector3d& b, double x, double y,
                                    double xt, double yt, double d) {
  const Eigen::Vector3d a = M * Eigen::Vector3d(x, y, 1.0);
  auto residual = [&](double dd, double& rx, double& ry, double& jx, double& jy) {
    const Eigen::Vector3d q = dd * a + b;
    if (!(q.z() > 0)) return false;
    rx = q.x() / q.z() - xt;
    ry = q.y() / q.z() - yt;
    jx = (a.x() * b.z() - b.x() * a.z()) / (q.z() * q.z());
    jy = (a.y() * b.z() - b.y() * a.z()) / (q.z() * q.z());
    return true;
  };
  double rx, ry, jx, jy;
  if (!residual(d, rx, ry, jx, jy)) return d;
  double cost = rx * rx + ry * ry;
  for (int it = 0; it < 20 && cost > 0; ++it) {
    const double jj = jx * jx + jy * jy;
    if (!(jj > 0)) break;
    const double next = d - (rx * jx + ry * jy) / jj;
    double nrx, nry, njx, njy;
    if (!(next > 0) || !residual(next, nrx, nry, njx, njy)) break;
    const double ncost = nrx * nrx + nry * nry;
    if (!(ncost < cost)) break;
    d = next, cost = ncost, rx = nrx, ry = nry, jx = njx, jy = njy;
  }
  return d;
}

}  // namespace detail

/// Depth along the epipolar ray closest to each pixel's displaced target:
/// algebraic least squares, then refined on pixel distance.
/// Pixels with no finite positive solution are marked invalid.
template <typename T>
GeoField<T> displacement_to_depth(const GeoField<T>& flow, const CameraPair& cams) {
  if (flow.kind != FieldKind::Flow) throw ShapeError("displacement_to_depth: field is not a flow");
  if (!(cams.t.norm() > 0)) throw DegenerateGeometryError("displacement_to_depth: zero baseline, depth unobservable");
  const auto H = flow.height(), W = flow.width(), P = H * W;
  const Eigen::Matrix3d M = cams.K_tgt * cams.R * cams.K_src.inverse();
  const Eigen::Vector3d b = cams.K_tgt * cams.t;
  std::vector<T> out(static_cast<std::size_t>(P), T(1));
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(P), 0);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const auto i = y * W + x;
      if (!flow.is_valid(i)) continue;
      const auto k = detail::epipolar_coeffs(M, b, static_cast<double>(x), static_cast<double>(y),
                                             x + static_cast<double>(flow.data[i]),
                                             y + static_cast<double>(flow.data[P + i]));
      const double den = k.c1 * k.c1 + k.c2 * k.c2;
      double d = (k.c1 * k.e1 + k.c2 * k.e2) / den;
      if (!(den > 0) || !std::isfinite(d) || !(d > 0)) continue;
      d = detail::refine_epipolar_depth(M, b, static_cast<double>(x), static_cast<double>(y),
                                        x + static_cast<double>(flow.data[i]), y + static_cast<double>(flow.data[P + i]), d);
      out[i] = static_cast<T>(d);
      valid[i] = 1;
    }
  return GeoField<T>(FieldKind::Depth, Tensor<T>({1, H, W}, std::move(out)), std::move(valid));
}

/// Differentiable inverse depth [N, 1, H, W] from flow [N, 2, H, W], solving
/// c_k = rho e_k in least squares. Unlike the depth form this stays finite at
/// zero parallax (rho = 0), which is what an untrained loop produces.
template <typename T>
Tensor<T> inverse_depth_from_flow(const Tensor<T>& flow, const CameraPair& cams, T eps = T(1e-12)) {
  if (flow.rank() != 4 || flow.dim(1) != 2) throw ShapeError("inverse_depth_from_flow: expected [N, 2, H, W]");
  const auto N = flow.dim(0), H = flow.dim(2), W = flow.dim(3), P = H * W;
  const Eigen::Matrix3d M = cams.K_tgt * cams.R * cams.K_src.inverse();
  const Eigen::Vector3d b = cams.K_tgt * cams.t;
  // Per-pixel constants: a (3 planes) and the pixel grid.
  std::vector<T> a(static_cast<std::size_t>(3 * P));
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const Eigen::Vector3d v = M * Eigen::Vector3d(x, y, 1.0);
      for (int k = 0; k < 3; ++k) a[k * P + y * W + x] = static_cast<T>(v[k]);
    }
  Tensor<T> ax({1, H, W}, std::vector<T>(a.begin(), a.begin() + P));
  Tensor<T> ay({1, H, W}, std::vector<T>(a.begin() + P, a.begin() + 2 * P));
  Tensor<T> az({1, H, W}, std::vector<T>(a.begin() + 2 * P, a.end()));
  auto target = add(flow, detail::pixel_grid<T>(H, W));
  auto parts = split(target, {1, 1}, 1);
  const auto& xt = parts[0];
  const auto& yt = parts[1];
  auto c1 = sub(mul(xt, az), ax);
  auto c2 = sub(mul(yt, az), ay);
  auto e1 = add_scalar(scale(xt, static_cast<T>(-b.z())), static_cast<T>(b.x()));
  auto e2 = add_scalar(scale(yt, static_cast<T>(-b.z())), static_cast<T>(b.y()));
  auto num = add(mul(c1, e1), mul(c2, e2));
  auto den = add_scalar(add(mul(e1, e1), mul(e2, e2)), eps);
  (void)N;
  return div(num, den);
}

}  // namespace geovit
