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

// Evaluation metrics over valid pixels. Reductions run in a fixed order and
// accumulate in double.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "geovit/geometry.hpp"

namespace geovit {

enum class F1Rule { KittiAnd, PaperOr };

namespace detail {

template <typename T>
std::vector<std::uint8_t> joint_mask(const GeoField<T>& pred, const GeoField<T>& gt,
                                     const std::vector<std::uint8_t>* mask, const char* who) {
  if (pred.data.shape() != gt.data.shape()) {
    throw ShapeError(std::string(who) + ": prediction " + to_string(pred.data.shape()) + " vs ground truth " +
                     to_string(gt.data.shape()));
  }
  std::vector<std::uint8_t> m(static_cast<std::size_t>(gt.pixels()));
  for (std::int64_t i = 0; i < gt.pixels(); ++i) {
    const bool outer = !mask || mask->empty() || (*mask)[static_cast<std::size_t>(i)];
    m[i] = outer && pred.is_valid(i) && gt.is_valid(i);
  }
  if (mask && !mask->empty() && static_cast<std::int64_t>(mask->size()) != gt.pixels()) {
    throw ShapeError(std::string(who) + ": mask size mismatch");
  }
  std::int64_t count = 0;
  for (auto v : m) count += v;
  if (count == 0) throw EmptyMaskError(std::string(who) + ": no valid pixels");
  return m;
}

}  // namespace detail

/// Mean endpoint error in pixels.
template <typename T>
double epe(const GeoField<T>& pred, const GeoField<T>& gt, const std::vector<std::uint8_t>* mask = nullptr) {
  const auto m = detail::joint_mask(pred, gt, mask, "epe");
  const auto P = gt.pixels();
  double total = 0;
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < P; ++i) {
    if (!m[i]) continue;
    const double du = static_cast<double>(pred.data[i]) - gt.data[i];
    const double dv = static_cast<double>(pred.data[P + i]) - gt.data[P + i];
    total += std::sqrt(du * du + dv * dv);
    ++n;
  }
  return total / static_cast<double>(n);
}

/// Percentage of outliers: error > 3 px and (KittiAnd) / or (PaperOr) > 5% of |gt|.
template <typename T>
double f1_all(const GeoField<T>& pred, const GeoField<T>& gt, const std::vector<std::uint8_t>* mask = nullptr,
              F1Rule rule = F1Rule::KittiAnd) {
  const auto m = detail::joint_mask(pred, gt, mask, "f1_all");
  const auto P = gt.pixels();
  std::int64_t bad = 0, n = 0;
  for (std::int64_t i = 0; i < P; ++i) {
    if (!m[i]) continue;
    const double u = gt.data[i], v = gt.data[P + i];
    const double du = static_cast<double>(pred.data[i]) - u, dv = static_cast<double>(pred.data[P + i]) - v;
    const double err = std::sqrt(du * du + dv * dv), mag = std::sqrt(u * u + v * v);
    const bool abs_out = err > 3.0, rel_out = err > 0.05 * mag;
    bad += rule == F1Rule::KittiAnd ? (abs_out && rel_out) : (abs_out || rel_out);
    ++n;
  }
  return 100.0 * static_cast<double>(bad) / static_cast<double>(n);
}

/// Percentage of pixels with |pred - gt| > n (disparity).
template <typename T>
double bad_np(const GeoField<T>& pred, const GeoField<T>& gt, double n_px,
              const std::vector<std::uint8_t>* mask = nullptr) {
  if (!(n_px > 0)) throw ParamError("bad_np: threshold must be positive");
  const auto m = detail::joint_mask(pred, gt, mask, "bad_np");
  std::int64_t bad = 0, n = 0;
  for (std::int64_t i = 0; i < gt.pixels(); ++i) {
    if (!m[i]) continue;
    bad += std::abs(static_cast<double>(pred.data[i]) - gt.data[i]) > n_px;
    ++n;
  }
  return 100.0 * static_cast<double>(bad) / static_cast<double>(n);
}

struct DepthMetrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
};

template <typename T>
DepthMetrics depth_metrics(const GeoField<T>& pred, const GeoField<T>& gt,
                           const std::vector<std::uint8_t>* mask = nullptr) {
  const auto m = detail::joint_mask(pred, gt, mask, "depth_metrics");
  double ar = 0, sr = 0, se = 0, sl = 0;
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < gt.pixels(); ++i) {
    if (!m[i]) continue;
    const double p = pred.data[i], g = gt.data[i];
    if (!(p > 0) || !(g > 0)) throw DomainError("depth_metrics: non-positive depth at pixel " + std::to_string(i));
    const double d = p - g, dl = std::log(p) - std::log(g);
    ar += std::abs(d) / g;
    sr += d * d / g;
    se += d * d;
    sl += dl * dl;
    ++n;
  }
  const double inv = 1.0 / static_cast<double>(n);
  return {ar * inv, sr * inv, std::sqrt(se * inv), std::sqrt(sl * inv)};
}

/// Named scalar metrics, printed as "key value" lines in insertion order of
/// the fixed key set.
struct MetricReport {
  std::map<std::string, double> values;
  std::vector<std::pair<std::string, std::map<std::string, double>>> per_sample;

  static const std::vector<std::string>& key_order() {
    static const std::vector<std::string> keys{"epe",  "f1_all", "bad1", "bad2",    "bad4",
                                               "abs_rel", "sq_rel", "rmse", "rmse_log"};
    return keys;
  }

  std::string to_text(bool with_samples = false) const {
    std::ostringstream os;
    os << std::setprecision(8);
    auto emit = [&](const std::map<std::string, double>& v, const std::string& indent) {
      for (const auto& k : key_order()) {
        auto it = v.find(k);
        if (it != v.end()) os << indent << k << ' ' << it->second << '\n';
      }
    };
    emit(values, "");
    if (with_samples) {
      for (const auto& [name, v] : per_sample) {
        os << "sample " << name << '\n';
        emit(v, "  ");
      }
    }
    return os.str();
  }
};

/// Metrics of one prediction, chosen by the field kind.
template <typename T>
std::map<std::string, double> field_metrics(const GeoField<T>& pred, const GeoField<T>& gt,
                                            F1Rule rule = F1Rule::KittiAnd) {
  if (pred.kind != gt.kind) throw ShapeError("metrics: prediction and ground truth kinds differ");
  switch (gt.kind) {
    case FieldKind::Flow: return {{"epe", epe(pred, gt)}, {"f1_all", f1_all(pred, gt, nullptr, rule)}};
    case FieldKind::Disparity: {
      std::map<std::string, double> r{{"bad1", bad_np(pred, gt, 1.0)}, {"bad2", bad_np(pred, gt, 2.0)},
                                      {"bad4", bad_np(pred, gt, 4.0)}};
      auto m = detail::joint_mask(pred, gt, nullptr, "epe");
      double total = 0;
      std::int64_t n = 0;
      for (std::int64_t i = 0; i < gt.pixels(); ++i)
        if (m[i]) total += std::abs(static_cast<double>(pred.data[i]) - gt.data[i]), ++n;
      r["epe"] = total / static_cast<double>(n);
      return r;
    }
    case FieldKind::Depth: {
      auto d = depth_metrics(pred, gt);
      return {{"abs_rel", d.abs_rel}, {"sq_rel", d.sq_rel}, {"rmse", d.rmse}, {"rmse_log", d.rmse_log}};
    }
  }
  return {};
}

/// Averages per-sample metric maps (each sample weighted equally).
inline MetricReport aggregate_metrics(const std::vector<std::pair<std::string, std::map<std::string, double>>>& samples) {
  MetricReport r;
  r.per_sample = samples;
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& [name, v] : samples)
    for (const auto& [k, x] : v) acc[k].first += x, acc[k].second += 1;
  for (const auto& [k, s] : acc) r.values[k] = s.first / s.second;
  return r;
}

}  // namespace geovit
