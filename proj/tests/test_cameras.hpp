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

#include <Eigen/Geometry>

#include <cmath>
#include <random>

#include "geovit/geometry.hpp"

namespace geovit::oracle {

/// Random non-degenerate pair: distinct intrinsics, rotation up to ~6 degrees,
/// baseline 0.1..1 with a small forward component.
inline CameraPair random_camera_pair(std::mt19937_64& rng, std::int64_t H, std::int64_t W) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto focal = [&] { return 60.0 + 40.0 * (u(rng) + 1.0); };
  CameraPair c;
  c.K_src = CameraPair::intrinsics(focal(), focal(), W / 2.0 + u(rng), H / 2.0 + u(rng));
  c.K_tgt = CameraPair::intrinsics(focal(), focal(), W / 2.0 + u(rng), H / 2.0 + u(rng));
  Eigen::Vector3d axis(u(rng), u(rng), u(rng));
  c.R = Eigen::AngleAxisd(0.1 * u(rng), axis.normalized()).toRotationMatrix();
  Eigen::Vector3d t(u(rng), 0.3 * u(rng), 0.1 * u(rng));
  std::uniform_real_distribution<double> len(0.1, 1.0);
  c.t = t.normalized() * len(rng);
  return c;
}

/// Depth along the source ray whose projection is closest (in pixels) to the
/// observed target point, by a log-spaced scan followed by golden-section refinement.
inline double epipolar_scan_depth(const CameraPair& c, double x, double y, double xt, double yt) {
  const Eigen::Vector3d ray = c.K_src.inverse() * Eigen::Vector3d(x, y, 1.0);
  auto dist2 = [&](double d) {
    const Eigen::Vector3d q = c.K_tgt * (c.R * (d * ray) + c.t);
    if (q.z() <= 0) return 1e300;
    const double dx = q.x() / q.z() - xt, dy = q.y() / q.z() - yt;
    return dx * dx + dy * dy;
  };
  const int n = 20000;
  const double lo = std::log(1e-2), hi = std::log(1e4);
  int best = 0;
  double best_v = 1e300;
  for (int k = 0; k <= n; ++k) {
    const double v = dist2(std::exp(lo + (hi - lo) * k / n));
    if (v < best_v) best_v = v, best = k;
  }
  double a = lo + (hi - lo) * std::max(best - 1, 0) / n, b = lo + (hi - lo) * std::min(best + 1, n) / n;
  const double g = (std::sqrt(5.0) - 1) / 2;
  for (int it = 0; it < 200; ++it) {
    const double m1 = b - g * (b - a), m2 = a + g * (b - a);
    if (dist2(std::exp(m1)) < dist2(std::exp(m2)))
      b = m2;
    else
      a = m1;
  }
  return std::exp(0.5 * (a + b));
}

}  // namespace geovit::oracle
