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

// Per-pixel reference metrics over raw row-major arrays, written independently
// of the library's reductions.

#include <cmath>
#include <vector>

namespace geovit::oracle {

struct FlowArrays {
  std::vector<double> pu, pv, gu, gv;
  std::vector<int> valid;
};

inline double brute_epe(const FlowArrays& a) {
  double s = 0;
  int n = 0;
  for (std::size_t i = 0; i < a.pu.size(); ++i) {
    if (!a.valid[i]) continue;
    s += std::hypot(a.pu[i] - a.gu[i], a.pv[i] - a.gv[i]);
    ++n;
  }
  return s / n;
}

inline double brute_f1(const FlowArrays& a, bool use_or) {
  int bad = 0, n = 0;
  for (std::size_t i = 0; i < a.pu.size(); ++i) {
    if (!a.valid[i]) continue;
    const double e = std::hypot(a.pu[i] - a.gu[i], a.pv[i] - a.gv[i]);
    const double g = std::hypot(a.gu[i], a.gv[i]);
    const bool out = use_or ? (e > 3 || e > 0.05 * g) : (e > 3 && e / g > 0.05);
    bad += out;
    ++n;
  }
  return 100.0 * bad / n;
}

inline double brute_bad(const std::vector<double>& p, const std::vector<double>& g, const std::vector<int>& valid,
                        double thr) {
  int bad = 0, n = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (valid[i]) bad += std::fabs(p[i] - g[i]) > thr, ++n;
  return 100.0 * bad / n;
}

inline std::vector<double> brute_depth(const std::vector<double>& p, const std::vector<double>& g,
                                       const std::vector<int>& valid) {
  double ar = 0, sr = 0, se = 0, sl = 0;
  int n = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!valid[i]) continue;
    ar += std::fabs(p[i] - g[i]) / g[i];
    sr += (p[i] - g[i]) * (p[i] - g[i]) / g[i];
    se += (p[i] - g[i]) * (p[i] - g[i]);
    sl += std::pow(std::log(p[i] / g[i]), 2);
    ++n;
  }
  return {ar / n, sr / n, std::sqrt(se / n), std::sqrt(sl / n)};
}

}  // namespace geovit::oracle
