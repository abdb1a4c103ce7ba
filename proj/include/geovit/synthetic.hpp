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

// Procedural training pairs with exact ground truth.
//
// The target image I2 is a band-limited random texture. The source image is
// I1 = warp(I2, field) with edge clamping, so warp(I2, gt) reproduces I1
// exactly; pixels whose displaced position leaves the frame are masked out.

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <tuple>
#include <utility>
#include <random>
#include <vector>

#include "geovit/geometry.hpp"

namespace geovit {

struct SyntheticParams {
  double max_disp = 4.0;      // bound on |field| in pixels
  std::int64_t patch = 16;    // h and w must be multiples (0 disables the check)
  int texture_waves = 24;     // cosines per channel
  double min_wavelength = 5.0;
  double max_wavelength = 40.0;
  double min_depth = 2.0;
  double max_depth = 8.0;
};

template <typename T>
struct SyntheticSample {
  Tensor<T> I1, I2;  // [3, H, W], values in [0, 1]
  GeoField<T> gt;
  std::optional<CameraPair> cams;
  std::uint64_t seed = 0;
};

namespace detail {

template <typename T>
Tensor<T> random_texture(std::int64_t H, std::int64_t W, const SyntheticParams& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> img(static_cast<std::size_t>(3 * H * W), 0.0);
  for (int c = 0; c < 3; ++c) {
    double* plane = img.data() + c * H * W;
    for (int k = 0; k < p.texture_waves; ++k) {
      const double lambda = p.min_wavelength * std::pow(p.max_wavelength / p.min_wavelength, unit(rng));
      const double theta = 2 * std::numbers::pi * unit(rng), phase = 2 * std::numbers::pi * unit(rng);
      const double kx = 2 * std::numbers::pi / lambda * std::cos(theta), ky = 2 * std::numbers::pi / lambda * std::sin(theta);
      const double amp = 0.5 + unit(rng);
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) plane[y * W + x] += amp * std::cos(kx * x + ky * y + phase);
    }
    const auto [lo, hi] = std::minmax_element(plane, plane + H * W);
    const double a = *lo, span = std::max(*hi - *lo, 1e-12);
    for (std::int64_t i = 0; i < H * W; ++i) plane[i] = (plane[i] - a) / span;
  }
  return Tensor<T>({3, H, W}, std::vector<T>(img.begin(), img.end()));
}

// Smooth scalar field on [H, W]: affine term plus one sinusoid, values in [-1, 1].
inline std::vector<double> smooth_field(std::int64_t H, std::int64_t W, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), unit(0.0, 1.0);
  const double a0 = u(rng), ax = u(rng), ay = u(rng), amp = 0.5 * unit(rng);
  const double lambda = 0.5 + 1.5 * unit(rng), theta = 2 * std::numbers::pi * unit(rng);
  const double phase = 2 * std::numbers::pi * unit(rng);
  std::vector<double> f(static_cast<std::size_t>(H * W));
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const double nx = 2.0 * x / std::max<std::int64_t>(W - 1, 1) - 1, ny = 2.0 * y / std::max<std::int64_t>(H - 1, 1) - 1;
      const double s = (nx * std::cos(theta) + ny * std::sin(theta)) * 2 * std::numbers::pi / lambda + phase;
      f[y * W + x] = a0 + ax * nx + ay * ny + amp * std::sin(s);
    }
  double m = 0;
  for (double v : f) m = std::max(m, std::abs(v));
  if (m > 0)
    for (double& v : f) v /= m;
  return f;
}

template <typename T>
std::vector<std::uint8_t> in_bounds_mask(const Tensor<T>& flow) {
  const auto H = flow.dim(1), W = flow.dim(2), P = H * W;
  std::vector<std::uint8_t> m(static_cast<std::size_t>(P));
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const double tx = x + static_cast<double>(flow[y * W + x]), ty = y + static_cast<double>(flow[P + y * W + x]);
      m[y * W + x] = tx >= 0 && tx <= W - 1 && ty >= 0 && ty <= H - 1;
    }
  return m;
}

}  // namespace detail

/// Random field magnitude, texture and (for depth) scene and cameras, all from `seed`.
template <typename T>
SyntheticSample<T> make_synthetic(FieldKind kind, std::int64_t h, std::int64_t w, std::uint64_t seed,
                                  const SyntheticParams& p = {}) {
  if (h <= 1 || w <= 1) throw ParamError("make_synthetic: image must be at least 2x2");
  if (p.patch > 0 && (h % p.patch || w % p.patch)) {
    throw ParamError("make_synthetic: " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by patch " +
                     std::to_string(p.patch));
  }
  if (!(p.max_disp >= 0) || !std::isfinite(p.max_disp)) throw ParamError("make_synthetic: max_disp must be >= 0");
  if (p.texture_waves < 1 || !(p.min_wavelength > 0) || !(p.max_wavelength >= p.min_wavelength)) {
    throw ParamError("make_synthetic: bad texture parameters");
  }
  if (!(p.min_depth > 0) || !(p.max_depth > p.min_depth)) throw ParamError("make_synthetic: bad depth range");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SyntheticSample<T> s;
  s.seed = seed;
  s.I2 = detail::random_texture<T>(h, w, p, rng);
  const auto P = h * w;
  std::vector<T> flow(static_cast<std::size_t>(2 * P), T(0));
  const double mag = p.max_disp * (0.5 + 0.5 * unit(rng));

  if (kind == FieldKind::Flow) {
    auto fu = detail::smooth_field(h, w, rng), fv = detail::smooth_field(h, w, rng);
    double m = 0;
    for (std::int64_t i = 0; i < P; ++i) m = std::max(m, std::hypot(fu[i], fv[i]));
    const double k = m > 0 ? mag / m : 0.0;
    for (std::int64_t i = 0; i < P; ++i) flow[i] = static_cast<T>(k * fu[i]), flow[P + i] = static_cast<T>(k * fv[i]);
  } else if (kind == FieldKind::Disparity) {
    auto f = detail::smooth_field(h, w, rng);
    for (std::int64_t i = 0; i < P; ++i) flow[i] = static_cast<T>(-mag * 0.5 * (f[i] + 1.0));
  } else {
    if (mag == 0) throw ParamError("make_synthetic: depth samples need max_disp > 0 (zero baseline)");
    // Slanted plane: inverse depth affine in pixel coordinates.
    const double rho_near = 1.0 / p.min_depth, rho_far = 1.0 / p.max_depth;
    const double r0 = rho_far + (rho_near - rho_far) * unit(rng), r1 = rho_far + (rho_near - rho_far) * unit(rng),
                 r2 = rho_far + (rho_near - rho_far) * unit(rng);
    std::vector<T> depth(static_cast<std::size_t>(P));
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const double a = static_cast<double>(x) / (w - 1), b = static_cast<double>(y) / (h - 1);
        depth[y * w + x] = static_cast<T>(1.0 / (r0 + (r1 - r0) * a + (r2 - r0) * b));
      }
    CameraPair cams;
    const double f = static_cast<double>(std::max(h, w));
    cams.K_src = cams.K_tgt = CameraPair::intrinsics(f, f, (w - 1) / 2.0, (h - 1) / 2.0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Eigen::Vector3d axis = Eigen::Vector3d(u(rng), u(rng), u(rng)).normalized();
    const double angle = 0.02 * u(rng);
    const Eigen::Vector3d dir = Eigen::Vector3d(-1.0, 0.1 * u(rng), 0.1 * u(rng)).normalized();
    GeoField<T> dfield(FieldKind::Depth, Tensor<T>({1, h, w}, depth));
    // Scale the motion so the largest induced displacement lands just under the bound.
    auto induce = [&](double scale) {
      cams.R = Eigen::AngleAxisd(angle * scale, axis).toRotationMatrix();
      cams.t = dir * scale;
      auto f = depth_to_displacement(dfield, cams);
      double m = 0;
      for (std::int64_t i = 0; i < P; ++i)
        m = std::max(m, std::hypot(static_cast<double>(f.data[i]), static_cast<double>(f.data[P + i])));
      return std::make_pair(f, m);
    };
    double scale = 1.0;
    auto [induced, m] = induce(scale);
    scale *= mag / m;
    std::tie(induced, m) = induce(scale);
    while (m > mag) {
      scale *= 0.99;
      std::tie(induced, m) = induce(scale);
    }
    flow = induced.data.vec();
    s.cams = cams;
    s.gt = GeoField<T>(FieldKind::Depth, Tensor<T>({1, h, w}, depth));
  }

  Tensor<T> ftensor({2, h, w}, flow);
  {
    NoGradGuard guard;
    s.I1 = mag == 0 ? s.I2.detach() : warp(s.I2, ftensor, PadMode::Clamp).detach();
  }
  auto mask = detail::in_bounds_mask(ftensor);
  if (kind == FieldKind::Flow) {
    s.gt = GeoField<T>(FieldKind::Flow, ftensor, mask);
  } else if (kind == FieldKind::Disparity) {
    NoGradGuard guard;
    s.gt = GeoField<T>(FieldKind::Disparity, neg(slice(ftensor, 0, 0, 1)).detach(), mask);
  } else {
    s.gt.valid = mask;
  }
  return s;
}

}  // namespace geovit
