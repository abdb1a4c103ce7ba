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

// Tiled inference with a trained model. Tiles run the refinement loop on
// displacements; depth is converted once on the blended full-image field, so
// the camera pair refers to the whole image.

#include <optional>

#include "geovit/refinement.hpp"
#include "geovit/tiling.hpp"

namespace geovit {

/// Raw displacement prediction [c, H, W] after `iters` steps (no output clamping).
template <typename T>
Tensor<T> predict_displacement(const Model<T>& m, const Tensor<T>& I1, const Tensor<T>& I2, std::int64_t iters,
                               PadMode pad = PadMode::Clamp) {
  NoGradGuard no_grad;
  LoopOptions opt;
  opt.iters = iters;
  opt.pad = pad;
  const Shape batched{1, I1.dim(0), I1.dim(1), I1.dim(2)};
  const auto preds = model_predictions(m, reshape(I1, batched), reshape(I2, batched), opt);
  const auto& last = preds.back();
  return reshape(last, {last.dim(1), last.dim(2), last.dim(3)}).detach();
}

/// Tile size defaults to the model's input size.
template <typename T>
GeoField<T> tiled_run_inference(const Model<T>& m, const Tensor<T>& I1, const Tensor<T>& I2, std::int64_t iters,
                                std::int64_t stride = 224, const std::optional<CameraPair>& cams = std::nullopt,
                                PadMode pad = PadMode::Clamp) {
  if (I1.rank() != 3 || I2.shape() != I1.shape()) throw ShapeError("tiled inference: expected two [3, H, W] images");
  if (m.task == Task::Depth && !cams) throw ParamError("tiled inference: depth task needs a camera pair");
  const auto plan = make_tile_plan(I1.dim(1), I1.dim(2), m.vit.image_h, m.vit.image_w, stride);
  const std::function<Tensor<T>(const Tensor<T>&, const Tensor<T>&)> tile_fn =
      [&](const Tensor<T>& a, const Tensor<T>& b) {
        auto d = predict_displacement(m, a, b, iters, pad);
        return m.task == Task::Disparity ? relu(d).detach() : d;
      };
  auto field = tiled_infer<T>(I1, I2, plan, tile_fn);
  switch (m.task) {
    case Task::Flow: return GeoField<T>(FieldKind::Flow, field);
    case Task::Disparity: return GeoField<T>(FieldKind::Disparity, field);
    case Task::Depth: return displacement_to_depth(GeoField<T>(FieldKind::Flow, field), *cams);
  }
  return {};
}

}  // namespace geovit
