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

// Flow color wheel: hue = direction (atan2(v, u), red at angle 0), saturation =
// magnitude / max_norm clamped to 1, value = 1. Zero flow is white.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>

#include "geovit/geometry.hpp"

namespace geovit {

/// Hue in degrees [0, 360) of a flow vector.
inline double flow_hue(double u, double v) {
  double h = std::atan2(v, u) * 180.0 / std::numbers::pi;
  if (h < 0) h += 360.0;
  return h;
}

/// HSV (h in degrees, s and v in [0, 1]) to RGB in [0, 1].
inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  auto f = [&](double n) {
    const double k = std::fmod(n + h / 60.0, 6.0);
    return v - v * s * std::max(0.0, std::min({k, 4.0 - k, 1.0}));
  };
  return {f(5.0), f(3.0), f(1.0)};
}

/// [3, H, W] float image in [0, 1]. Without max_norm the largest valid
/// magnitude is used. Invalid pixels are black.
template <typename T>
Tensor<float> flow_to_color(const GeoField<T>& flow, std::optional<double> max_norm = std::nullopt) {
  if (flow.kind != FieldKind::Flow) throw ShapeError("flow_to_color: field is not a flow");
  const auto P = flow.pixels();
  double norm = 0;
  if (max_norm) {
    norm = *max_norm;
  } else {
    for (std::int64_t i = 0; i < P; ++i)
      if (flow.is_valid(i)) norm = std::max(norm, std::hypot(double(flow.data[i]), double(flow.data[P + i])));
  }
  if (!(norm > 0)) norm = 1.0;
  std::vector<float> out(static_cast<std::size_t>(3 * P), 0.0f);
  for (std::int64_t i = 0; i < P; ++i) {
    if (!flow.is_valid(i)) continue;
    const double u = flow.data[i], v = flow.data[P + i];
    const auto rgb = hsv_to_rgb(flow_hue(u, v), std::min(std::hypot(u, v) / norm, 1.0), 1.0);
    for (int c = 0; c < 3; ++c) out[c * P + i] = static_cast<float>(rgb[c]);
  }
  return Tensor<float>({3, flow.height(), flow.width()}, std::move(out));
}

/// Scalar map (disparity or depth) to a gray image, linearly normalized over valid pixels.
template <typename T>
Tensor<float> scalar_to_gray(const GeoField<T>& f) {
  const auto P = f.pixels();
  double lo = 1e300, hi = -1e300;
  for (std::int64_t i = 0; i < P; ++i)
    if (f.is_valid(i)) lo = std::min(lo, double(f.data[i])), hi = std::max(hi, double(f.data[i]));
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<float> out(static_cast<std::size_t>(3 * P), 0.0f);
  for (std::int64_t i = 0; i < P; ++i) {
    if (!f.is_valid(i)) continue;
    const auto g = static_cast<float>((f.data[i] - lo) / span);
    out[i] = out[P + i] = out[2 * P + i] = g;
  }
  return Tensor<float>({3, f.height(), f.width()}, std::move(out));
}

}  // namespace geovit
