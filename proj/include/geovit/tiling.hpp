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

// Sliding-window inference for images larger than the model's input size.
// Tiles start at 0, stride, 2*stride, ... with the last tile on each axis
// clamped to the image edge. Overlaps are blended with separable hat weights
// (largest at the tile center), normalized per pixel over covering tiles.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "geovit/ops.hpp"

namespace geovit {

struct TilePlan {
  std::int64_t image_h = 0, image_w = 0;
  std::int64_t tile_h = 0, tile_w = 0;
  std::int64_t stride = 224;
  std::vector<std::pair<std::int64_t, std::int64_t>> tiles;  // (y, x) origins

  /// Unnormalized hat weight of tile-local pixel (i, j).
  double hat(std::int64_t i, std::int64_t j) const {
    const double wy = std::min(i + 0.5, tile_h - i - 0.5), wx = std::min(j + 0.5, tile_w - j - 0.5);
    return wy * wx;
  }

  /// Per-tile weight maps [tile_h * tile_w], normalized so covering weights sum to 1.
  std::vector<std::vector<double>> weight_maps() const {
    const auto th = std::min(tile_h, image_h), tw = std::min(tile_w, image_w);
    std::vector<double> total(static_cast<std::size_t>(image_h * image_w), 0.0);
    for (const auto& [oy, ox] : tiles)
      for (std::int64_t i = 0; i < th; ++i)
        for (std::int64_t j = 0; j < tw; ++j) total[(oy + i) * image_w + ox + j] += hat(i, j);
    for (std::int64_t p = 0; p < image_h * image_w; ++p)
      if (!(total[p] > 0)) throw PlanError("tile plan leaves pixel " + std::to_string(p) + " uncovered");
    std::vector<std::vector<double>> maps;
    for (const auto& [oy, ox] : tiles) {
      std::vector<double> m(static_cast<std::size_t>(th * tw));
      for (std::int64_t i = 0; i < th; ++i)
        for (std::int64_t j = 0; j < tw; ++j) m[i * tw + j] = hat(i, j) / total[(oy + i) * image_w + ox + j];
      maps.push_back(std::move(m));
    }
    return maps;
  }
};

namespace detail {

inline std::vector<std::int64_t> tile_origins(std::int64_t length, std::int64_t tile, std::int64_t stride) {
  if (tile >= length) return {0};
  std::vector<std::int64_t> o;
  for (std::int64_t s = 0; s + tile < length; s += stride) o.push_back(s);
  o.push_back(length - tile);
  return o;
}

}  // namespace detail

inline TilePlan make_tile_plan(std::int64_t image_h, std::int64_t image_w, std::int64_t tile_h, std::int64_t tile_w,
                               std::int64_t stride = 224) {
  if (image_h <= 0 || image_w <= 0 || tile_h <= 0 || tile_w <= 0) throw PlanError("tile plan: sizes must be positive");
  if (stride <= 0) throw PlanError("tile plan: stride must be positive");
  if (stride > std::min(tile_h, tile_w) && (image_h > tile_h || image_w > tile_w)) {
    throw PlanError("tile plan: stride " + std::to_string(stride) + " exceeds the tile size, pixels would be skipped");
  }
  TilePlan p{image_h, image_w, tile_h, tile_w, stride, {}};
  for (auto y : detail::tile_origins(image_h, tile_h, stride))
    for (auto x : detail::tile_origins(image_w, tile_w, stride)) p.tiles.emplace_back(y, x);
  return p;
}

/// Runs `infer(tile1, tile2) -> [c, tile_h, tile_w]` on every tile of [3, H, W]
/// images and blends the results into [c, H, W]. Images smaller than the tile
/// are edge-padded to the tile size and the result is cropped back.
template <typename T>
Tensor<T> tiled_infer(const Tensor<T>& I1, const Tensor<T>& I2, const TilePlan& plan,
                      const std::function<Tensor<T>(const Tensor<T>&, const Tensor<T>&)>& infer) {
  if (I1.rank() != 3 || I1.shape() != I2.shape()) throw ShapeError("tiled_infer: expected two [3, H, W] images");
  if (I1.dim(1) != plan.image_h || I1.dim(2) != plan.image_w) throw ShapeError("tiled_infer: plan / image mismatch");
  if (plan.tiles.empty()) throw PlanError("tiled_infer: plan has no tiles");
  NoGradGuard guard;
  const auto H = plan.image_h, W = plan.image_w, C = I1.dim(0);
  const auto th = std::min(plan.tile_h, H), tw = std::min(plan.tile_w, W);
  const auto pad_b = plan.tile_h - th, pad_r = plan.tile_w - tw;
  const auto maps = plan.weight_maps();

  auto crop = [&](const Tensor<T>& img, std::int64_t oy, std::int64_t ox) {
    auto c = slice(slice(img, 1, oy, oy + th), 2, ox, ox + tw);
    if (pad_b == 0 && pad_r == 0) return c.detach();
    auto padded = pad2d(reshape(c, {1, C, th, tw}), 0, pad_b, 0, pad_r, PadMode::Clamp);
    return reshape(padded, {C, plan.tile_h, plan.tile_w}).detach();
  };

  std::vector<T> out;
  std::int64_t oc = 0;
  for (std::size_t k = 0; k < plan.tiles.size(); ++k) {
    const auto [oy, ox] = plan.tiles[k];
    auto pred = infer(crop(I1, oy, ox), crop(I2, oy, ox));
    if (pred.rank() != 3 || pred.dim(1) != plan.tile_h || pred.dim(2) != plan.tile_w) {
      throw ShapeError("tiled_infer: model output " + to_string(pred.shape()) + " does not match the tile");
    }
    if (k == 0) {
      oc = pred.dim(0);
      out.assign(static_cast<std::size_t>(oc * H * W), T(0));
    }
    const auto& m = maps[k];
    for (std::int64_t c = 0; c < oc; ++c)
      for (std::int64_t i = 0; i < th; ++i)
        for (std::int64_t j = 0; j < tw; ++j)
          out[(c * H + oy + i) * W + ox + j] +=
              static_cast<T>(m[i * tw + j]) * pred[(c * plan.tile_h + i) * plan.tile_w + j];
  }
  return Tensor<T>({oc, H, W}, std::move(out));
}

}  // namespace geovit
