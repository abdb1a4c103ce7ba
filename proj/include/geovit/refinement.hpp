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

// Decoders on top of the pair encoder: a single-shot linear head and the
// iterative warp-and-refine loop.
//
// One refinement step at coarse resolution (grid = image / patch):
//   I2w    = warp(I2, upsample(g) * patch)
//   feats  = encode_pair(I1, I2w)                       [N, L, D]
//   ctx    = linear(feats) -> hidden part | input part  (hidden part seeds h at step 0)
//   motion = motion_encoder(g)
//   h'     = SepConvGRU(h, concat(relu(input part), motion))
//   g'     = g + flow_head(h'),   mask = mask_head(h')
// g is kept in coarse-grid units; full-resolution fields are patch * upsample(g).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "geovit/geometry.hpp"
#include "geovit/vit.hpp"

namespace geovit {

enum class Task { Flow, Disparity, Depth };

inline const char* task_name(Task t) {
  switch (t) {
    case Task::Flow: return "flow";
    case Task::Disparity: return "disparity";
    case Task::Depth: return "depth";
  }
  return "?";
}

inline Task parse_task(const std::string& s) {
  if (s == "flow") return Task::Flow;
  if (s == "disparity" || s == "stereo") return Task::Disparity;
  if (s == "depth") return Task::Depth;
  throw ParamError("unknown task '" + s + "' (expected flow, disparity or depth)");
}

/// Channels of the refinement state g for a task (depth runs a flow loop).
inline std::int64_t state_channels(Task t) { return t == Task::Disparity ? 1 : 2; }

struct DecoderConfig {
  std::int64_t hidden = 128;
  std::int64_t input = 128;
  std::int64_t motion = 128;
  std::int64_t motion_conv = 64;
  std::int64_t head = 256;
  std::int64_t mask_hidden = 256;
  double mask_scale = 0.25;

  std::int64_t context() const { return hidden + input; }

  void validate() const {
    if (hidden <= 0 || input <= 0 || motion <= 2 || motion_conv <= 0 || head <= 0 || mask_hidden <= 0) {
      throw ParamError("DecoderConfig: widths must be positive (motion > 2)");
    }
  }

  void to_meta(std::map<std::string, std::string>& m) const {
    m["decoder.hidden"] = std::to_string(hidden);
    m["decoder.input"] = std::to_string(input);
    m["decoder.motion"] = std::to_string(motion);
    m["decoder.motion_conv"] = std::to_string(motion_conv);
    m["decoder.head"] = std::to_string(head);
    m["decoder.mask_hidden"] = std::to_string(mask_hidden);
    std::ostringstream os;
    os.precision(17);
    os << mask_scale;
    m["decoder.mask_scale"] = os.str();
  }

  template <typename T>
  static DecoderConfig from_meta(const Checkpoint<T>& c) {
    DecoderConfig d;
    d.hidden = static_cast<std::int64_t>(c.meta_number("decoder.hidden"));
    d.input = static_cast<std::int64_t>(c.meta_number("decoder.input"));
    d.motion = static_cast<std::int64_t>(c.meta_number("decoder.motion"));
    d.motion_conv = static_cast<std::int64_t>(c.meta_number("decoder.motion_conv"));
    d.head = static_cast<std::int64_t>(c.meta_number("decoder.head"));
    d.mask_hidden = static_cast<std::int64_t>(c.meta_number("decoder.mask_hidden"));
    d.mask_scale = c.meta_number("decoder.mask_scale");
    return d;
  }
};

template <typename T>
struct DecoderWeights {
  Tensor<T> ctx_w, ctx_b;              // [hidden + input, D]
  Tensor<T> motion1_w, motion1_b;      // 7x7, 2 -> motion_conv
  Tensor<T> motion2_w, motion2_b;      // 3x3, motion_conv -> motion - 2
  Tensor<T> convz1_w, convz1_b, convr1_w, convr1_b, convq1_w, convq1_b;  // 1x5
  Tensor<T> convz2_w, convz2_b, convr2_w, convr2_b, convq2_w, convq2_b;  // 5x1
  Tensor<T> flow1_w, flow1_b;          // 3x3, hidden -> head
  Tensor<T> flow2_w, flow2_b;          // 3x3, head -> 2
  Tensor<T> mask1_w, mask1_b;          // 3x3, hidden -> mask_hidden
  Tensor<T> mask2_w, mask2_b;          // 1x1, mask_hidden -> 9 * patch^2

  std::vector<std::pair<std::string, Tensor<T>*>> named_parameters(const std::string& prefix = "") {
    return {{prefix + "context.weight", &ctx_w},       {prefix + "context.bias", &ctx_b},
            {prefix + "motion.conv1.weight", &motion1_w}, {prefix + "motion.conv1.bias", &motion1_b},
            {prefix + "motion.conv2.weight", &motion2_w}, {prefix + "motion.conv2.bias", &motion2_b},
            {prefix + "gru.convz1.weight", &convz1_w}, {prefix + "gru.convz1.bias", &convz1_b},
            {prefix + "gru.convr1.weight", &convr1_w}, {prefix + "gru.convr1.bias", &convr1_b},
            {prefix + "gru.convq1.weight", &convq1_w}, {prefix + "gru.convq1.bias", &convq1_b},
            {prefix + "gru.convz2.weight", &convz2_w}, {prefix + "gru.convz2.bias", &convz2_b},
            {prefix + "gru.convr2.weight", &convr2_w}, {prefix + "gru.convr2.bias", &convr2_b},
            {prefix + "gru.convq2.weight", &convq2_w}, {prefix + "gru.convq2.bias", &convq2_b},
            {prefix + "flow_head.conv1.weight", &flow1_w}, {prefix + "flow_head.conv1.bias", &flow1_b},
            {prefix + "flow_head.conv2.weight", &flow2_w}, {prefix + "flow_head.conv2.bias", &flow2_b},
            {prefix + "mask.conv1.weight", &mask1_w},  {prefix + "mask.conv1.bias", &mask1_b},
            {prefix + "mask.conv2.weight", &mask2_w},  {prefix + "mask.conv2.bias", &mask2_b}};
  }
};

inline std::vector<std::pair<std::string, Shape>> decoder_param_shapes(const DecoderConfig& c, std::int64_t embed_dim,
                                                                      std::int64_t patch) {
  const auto hx = c.hidden + c.input + c.motion;
  return {{"context.weight", {c.context(), embed_dim}},
          {"context.bias", {c.context()}},
          {"motion.conv1.weight", {c.motion_conv, 2, 7, 7}},
          {"motion.conv1.bias", {c.motion_conv}},
          {"motion.conv2.weight", {c.motion - 2, c.motion_conv, 3, 3}},
          {"motion.conv2.bias", {c.motion - 2}},
          {"gru.convz1.weight", {c.hidden, hx, 1, 5}},
          {"gru.convz1.bias", {c.hidden}},
          {"gru.convr1.weight", {c.hidden, hx, 1, 5}},
          {"gru.convr1.bias", {c.hidden}},
          {"gru.convq1.weight", {c.hidden, hx, 1, 5}},
          {"gru.convq1.bias", {c.hidden}},
          {"gru.convz2.weight", {c.hidden, hx, 5, 1}},
          {"gru.convz2.bias", {c.hidden}},
          {"gru.convr2.weight", {c.hidden, hx, 5, 1}},
          {"gru.convr2.bias", {c.hidden}},
          {"gru.convq2.weight", {c.hidden, hx, 5, 1}},
          {"gru.convq2.bias", {c.hidden}},
          {"flow_head.conv1.weight", {c.head, c.hidden, 3, 3}},
          {"flow_head.conv1.bias", {c.head}},
          {"flow_head.conv2.weight", {2, c.head, 3, 3}},
          {"flow_head.conv2.bias", {2}},
          {"mask.conv1.weight", {c.mask_hidden, c.hidden, 3, 3}},
          {"mask.conv1.bias", {c.mask_hidden}},
          {"mask.conv2.weight", {9 * patch * patch, c.mask_hidden, 1, 1}},
          {"mask.conv2.bias", {9 * patch * patch}}};
}

namespace detail {

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor of a layer, where
// fan_in is the product of all weight axes but the first.
template <typename T>
void init_uniform_fan_in(std::vector<std::pair<std::string, Tensor<T>*>> params,
                         const std::vector<std::pair<std::string, Shape>>& shapes, std::mt19937_64& rng) {
  double bound = 1.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& s = shapes[i].second;
    if (s.size() > 1) {
      std::int64_t fan_in = 1;
      for (std::size_t k = 1; k < s.size(); ++k) fan_in *= s[k];
      bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    }
    *params[i].second = Tensor<T>::uniform(s, rng, static_cast<T>(-bound), static_cast<T>(bound));
  }
}

}  // namespace detail

template <typename T>
DecoderWeights<T> random_decoder_weights(const DecoderConfig& c, std::int64_t embed_dim, std::int64_t patch,
                                         std::mt19937_64& rng) {
  c.validate();
  DecoderWeights<T> w;
  detail::init_uniform_fan_in(w.named_parameters(), decoder_param_shapes(c, embed_dim, patch), rng);
  return w;
}

/// Affine map from each token to a c x patch x patch tile.
template <typename T>
struct LinearHeadWeights {
  Tensor<T> w, b;  // [c * patch^2, D], [c * patch^2]

  std::vector<std::pair<std::string, Tensor<T>*>> named_parameters(const std::string& prefix = "") {
    return {{prefix + "linear.weight", &w}, {prefix + "linear.bias", &b}};
  }
};

template <typename T>
LinearHeadWeights<T> random_linear_head(std::int64_t out_channels, std::int64_t embed_dim, std::int64_t patch,
                                        std::mt19937_64& rng) {
  LinearHeadWeights<T> h;
  const auto rows = out_channels * patch * patch;
  detail::init_uniform_fan_in(h.named_parameters(), {{"w", {rows, embed_dim}}, {"b", {rows}}}, rng);
  return h;
}

// ---------------------------------------------------------------------------
// Heads and building blocks

/// features [N, L, D] (or [L, D]) -> field [N, c, H, W] (or [c, H, W]).
template <typename T>
Tensor<T> linear_head(const Tensor<T>& features, const LinearHeadWeights<T>& head, std::int64_t out_channels,
                      std::int64_t grid_h, std::int64_t grid_w, std::int64_t patch) {
  if (features.rank() == 2) {
    auto out = linear_head(reshape(features, {1, features.dim(0), features.dim(1)}), head, out_channels, grid_h, grid_w,
                           patch);
    return reshape(out, {out_channels, grid_h * patch, grid_w * patch});
  }
  if (features.rank() != 3 || features.dim(1) != grid_h * grid_w) {
    throw ShapeError("linear_head: features " + to_string(features.shape()) + " do not match a " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  if (head.w.dim(0) != out_channels * patch * patch) throw ShapeError("linear_head: weight rows != c * patch^2");
  const auto N = features.dim(0);
  auto y = linear(features, head.w, head.b);  // [N, L, c*p*p]
  y = reshape(y, {N, grid_h, grid_w, out_channels, patch, patch});
  y = permute(y, {0, 3, 1, 4, 2, 5});
  return reshape(y, {N, out_channels, grid_h * patch, grid_w * patch});
}

/// Softmax-weighted 3x3 neighborhood combination per fine pixel, times
/// `value_scale`. g [N, C, Hp, Wp], logits [N, 9 p^2, Hp, Wp] laid out as
/// k * p^2 + i * p + j (k = neighbor index ky * 3 + kx, (i, j) = sub-pixel).
/// Neighbors beyond the grid replicate the border cell.
template <typename T>
Tensor<T> convex_upsample(const Tensor<T>& g, const Tensor<T>& logits, std::int64_t patch, T value_scale) {
  if (g.rank() == 3 && logits.rank() == 3) {
    auto out = convex_upsample(reshape(g, {1, g.dim(0), g.dim(1), g.dim(2)}),
                               reshape(logits, {1, logits.dim(0), logits.dim(1), logits.dim(2)}), patch, value_scale);
    return reshape(out, {out.dim(1), out.dim(2), out.dim(3)});
  }
  if (g.rank() != 4 || logits.rank() != 4 || logits.dim(0) != g.dim(0) || logits.dim(1) != 9 * patch * patch ||
      logits.dim(2) != g.dim(2) || logits.dim(3) != g.dim(3)) {
    throw ShapeError("convex_upsample: field " + to_string(g.shape()) + " and logits " + to_string(logits.shape()) +
                     " disagree for patch " + std::to_string(patch));
  }
  const auto N = g.dim(0), C = g.dim(1), Hp = g.dim(2), Wp = g.dim(3), pp = patch * patch;
  const auto H = Hp * patch, W = Wp * patch, cells = Hp * Wp;
  // Softmax weights, stored [N, 9, p*p, Hp, Wp] like the logits.
  std::vector<T> wts(static_cast<std::size_t>(logits.numel()));
  const T* lg = logits.data().data();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t s = 0; s < pp; ++s)
      for (std::int64_t c = 0; c < cells; ++c) {
        auto at = [&](std::int64_t k) { return ((n * 9 + k) * pp + s) * cells + c; };
        T m = lg[at(0)];
        for (int k = 1; k < 9; ++k) m = std::max(m, lg[at(k)]);
        T z = T(0);
        for (int k = 0; k < 9; ++k) z += (wts[at(k)] = std::exp(lg[at(k)] - m));
        for (int k = 0; k < 9; ++k) wts[at(k)] /= z;
      }
  auto neighbor = [Hp, Wp](std::int64_t y, std::int64_t x, int k) {
    const auto ny = std::clamp<std::int64_t>(y + k / 3 - 1, 0, Hp - 1);
    const auto nx = std::clamp<std::int64_t>(x + k % 3 - 1, 0, Wp - 1);
    return ny * Wp + nx;
  };
  std::vector<T> out(static_cast<std::size_t>(N * C * H * W));
  const T* gp = g.data().data();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t y = 0; y < Hp; ++y)
      for (std::int64_t x = 0; x < Wp; ++x)
        for (std::int64_t i = 0; i < patch; ++i)
          for (std::int64_t j = 0; j < patch; ++j) {
            const auto s = i * patch + j, c = y * Wp + x;
            for (std::int64_t ch = 0; ch < C; ++ch) {
              const T* plane = gp + (n * C + ch) * cells;
              T v = T(0);
              for (int k = 0; k < 9; ++k) v += wts[((n * 9 + k) * pp + s) * cells + c] * plane[neighbor(y, x, k)];
              out[((n * C + ch) * H + y * patch + i) * W + x * patch + j] = value_scale * v;
            }
          }
  auto sg = g.storage(), sl = logits.storage();
  return make_op_result<T>(
      "convex_upsample", {N, C, H, W}, std::move(out), {g, logits},
      [sg, sl, wts = std::move(wts), neighbor, N, C, Hp, Wp, patch, pp, cells, H, W, value_scale](
          const detail::Storage<T>&, std::span<const T> go) {
        T* gg = grad_sink(sg);
        T* gl = grad_sink(sl);
        const T* gp = sg->data.data();
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t y = 0; y < Hp; ++y)
            for (std::int64_t x = 0; x < Wp; ++x)
              for (std::int64_t i = 0; i < patch; ++i)
                for (std::int64_t j = 0; j < patch; ++j) {
                  const auto s = i * patch + j, c = y * Wp + x;
                  T dw[9] = {};
                  for (std::int64_t ch = 0; ch < C; ++ch) {
                    const T gv = value_scale * go[((n * C + ch) * H + y * patch + i) * W + x * patch + j];
                    const T* plane = gp + (n * C + ch) * cells;
                    for (int k = 0; k < 9; ++k) {
                      const auto idx = ((n * 9 + k) * pp + s) * cells + c;
                      if (gg) gg[(n * C + ch) * cells + neighbor(y, x, k)] += gv * wts[idx];
                      dw[k] += gv * plane[neighbor(y, x, k)];
                    }
                  }
                  if (!gl) continue;
                  T dot = T(0);
                  for (int k = 0; k < 9; ++k) dot += dw[k] * wts[((n * 9 + k) * pp + s) * cells + c];
                  for (int k = 0; k < 9; ++k) {
                    const auto idx = ((n * 9 + k) * pp + s) * cells + c;
                    gl[idx] += wts[idx] * (dw[k] - dot);
                  }
                }
      });
}

/// Bilinear x patch upsampling with values scaled by patch (coarse units -> pixels).
template <typename T>
Tensor<T> upsample_to_full(const Tensor<T>& g, std::int64_t patch) {
  return scale(bilinear_resize(g, g.dim(2) * patch, g.dim(3) * patch, false), static_cast<T>(patch));
}

template <typename T>
Tensor<T> conv_same(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  Conv2dParams p;
  p.pad_h = w.dim(2) / 2;
  p.pad_w = w.dim(3) / 2;
  return conv2d(x, w, b, p);
}

/// 2-channel coarse displacement [N, 2, Hp, Wp] -> motion features [N, motion, Hp, Wp].
template <typename T>
Tensor<T> motion_encoder(const Tensor<T>& g2, const DecoderWeights<T>& w) {
  auto m = relu(conv_same(g2, w.motion1_w, w.motion1_b));
  m = relu(conv_same(m, w.motion2_w, w.motion2_b));
  return concat<T>({m, g2}, 1);
}

template <typename T>
Tensor<T> gru_half(const Tensor<T>& h, const Tensor<T>& x, const Tensor<T>& wz, const Tensor<T>& bz,
                   const Tensor<T>& wr, const Tensor<T>& br, const Tensor<T>& wq, const Tensor<T>& bq) {
  auto hx = concat<T>({h, x}, 1);
  auto z = sigmoid(conv_same(hx, wz, bz));
  auto r = sigmoid(conv_same(hx, wr, br));
  auto q = tanh(conv_same(concat<T>({mul(r, h), x}, 1), wq, bq));
  return add(h, mul(z, sub(q, h)));
}

/// Separable ConvGRU: a 1x5 pass then a 5x1 pass.
template <typename T>
Tensor<T> conv_gru(const Tensor<T>& h, const Tensor<T>& x, const DecoderWeights<T>& w) {
  auto h1 = gru_half(h, x, w.convz1_w, w.convz1_b, w.convr1_w, w.convr1_b, w.convq1_w, w.convq1_b);
  return gru_half(h1, x, w.convz2_w, w.convz2_b, w.convr2_w, w.convr2_b, w.convq2_w, w.convq2_b);
}

template <typename T>
Tensor<T> flow_head(const Tensor<T>& h, const DecoderWeights<T>& w) {
  return conv_same(relu(conv_same(h, w.flow1_w, w.flow1_b)), w.flow2_w, w.flow2_b);
}

template <typename T>
Tensor<T> mask_head(const Tensor<T>& h, const DecoderWeights<T>& w, double mask_scale) {
  auto m = conv_same(relu(conv_same(h, w.mask1_w, w.mask1_b)), w.mask2_w, w.mask2_b);
  return scale(m, static_cast<T>(mask_scale));
}

// ---------------------------------------------------------------------------
// The refinement loop

template <typename T>
struct RefinementState {
  Tensor<T> g;       // [N, c, Hp, Wp] in coarse-grid units; c = 1 for disparity
  Tensor<T> hidden;  // [N, hidden, Hp, Wp]; undefined before the first step
  Tensor<T> mask;    // mask logits from the latest step
  std::int64_t step = 0;
};

template <typename T>
RefinementState<T> initial_state(std::int64_t batch, Task task, const ViTConfig& vit) {
  RefinementState<T> s;
  s.g = Tensor<T>::zeros({batch, state_channels(task), vit.grid_h(), vit.grid_w()});
  return s;
}

/// g as a 2-channel displacement (disparity d becomes (-d, 0)).
template <typename T>
Tensor<T> state_as_flow(const Tensor<T>& g, Task task) {
  return task == Task::Disparity ? disparity_embed(g) : g;
}

/// One refinement step on normalized images [N, 3, H, W].
template <typename T>
RefinementState<T> refine_step(const Tensor<T>& I1, const Tensor<T>& I2, const RefinementState<T>& state,
                               const ViTWeights<T>& enc, const ViTConfig& vit, const DecoderWeights<T>& dec,
                               const DecoderConfig& dcfg, Task task, PadMode pad = PadMode::Clamp) {
  const auto N = I1.dim(0), Hp = vit.grid_h(), Wp = vit.grid_w();
  if (state.g.rank() != 4 || state.g.shape() != Shape{N, state_channels(task), Hp, Wp}) {
    throw ShapeError(std::string("refine_step: state ") + to_string(state.g.shape()) + " does not fit task " +
                     task_name(task));
  }
  auto g2 = state_as_flow(state.g, task);
  auto I2w = warp(I2, upsample_to_full(g2, vit.patch), pad);
  auto feats = encode_pair(I1, I2w, enc, vit);  // [N, L, D]
  auto ctx = linear(feats, dec.ctx_w, dec.ctx_b);
  ctx = permute(reshape(ctx, {N, Hp, Wp, dcfg.context()}), {0, 3, 1, 2});
  auto parts = split(ctx, {dcfg.hidden, dcfg.input}, 1);
  auto hidden = state.hidden.defined() ? state.hidden : tanh(parts[0]);
  auto x = concat<T>({relu(parts[1]), motion_encoder(g2, dec)}, 1);

  RefinementState<T> next;
  next.hidden = conv_gru(hidden, x, dec);
  auto delta = flow_head(next.hidden, dec);
  if (task == Task::Disparity) delta = neg(slice(delta, 1, 0, 1));
  next.g = add(state.g, delta);
  next.mask = mask_head(next.hidden, dec, dcfg.mask_scale);
  next.step = state.step + 1;
  return next;
}

/// Full-resolution prediction of a state: [N, c, H, W] in pixels.
template <typename T>
Tensor<T> upsample_state(const RefinementState<T>& s, std::int64_t patch) {
  return convex_upsample(s.g, s.mask, patch, static_cast<T>(patch));
}

struct LoopOptions {
  std::int64_t iters = 6;
  PadMode pad = PadMode::Clamp;
  bool zero_vertical = false;  // clamp the v channel of a flow state to 0 after every step
};

/// Runs T steps from the zero state; returns the full-resolution field after every step.
template <typename T>
std::vector<Tensor<T>> refine_sequence(const Tensor<T>& I1, const Tensor<T>& I2, const ViTWeights<T>& enc,
                                       const ViTConfig& vit, const DecoderWeights<T>& dec, const DecoderConfig& dcfg,
                                       Task task, const LoopOptions& opt) {
  if (opt.iters < 1) throw ParamError("refinement: iters must be >= 1");
  auto state = initial_state<T>(I1.dim(0), task, vit);
  std::vector<Tensor<T>> preds;
  for (std::int64_t t = 0; t < opt.iters; ++t) {
    state = refine_step(I1, I2, state, enc, vit, dec, dcfg, task, opt.pad);
    if (opt.zero_vertical && state_channels(task) == 2) {
      state.g = concat<T>({slice(state.g, 1, 0, 1), Tensor<T>::zeros({state.g.dim(0), 1, state.g.dim(2), state.g.dim(3)})},
                          1);
    }
    preds.push_back(upsample_state(state, vit.patch));
  }
  return preds;
}

// ---------------------------------------------------------------------------
// Model bundle

enum class HeadKind { Refine, Linear };

template <typename T>
struct Model {
  ViTConfig vit;
  DecoderConfig decoder_config;
  Normalization normalization;
  Task task = Task::Flow;
  HeadKind head_kind = HeadKind::Refine;
  ViTWeights<T> encoder;
  DecoderWeights<T> decoder;
  LinearHeadWeights<T> head;

  std::int64_t out_channels() const { return state_channels(task); }

  /// Deep copy (parameter handles otherwise share storage).
  Model clone() const {
    Model c = *this;
    for (auto& [name, ptr] : c.named_parameters())
      if (ptr->defined()) *ptr = ptr->detach();
    return c;
  }

  std::vector<std::pair<std::string, Tensor<T>*>> named_parameters() {
    auto out = encoder.named_parameters("encoder.");
    for (auto& p : decoder.named_parameters("decoder.")) out.push_back(p);
    for (auto& p : head.named_parameters("head.")) out.push_back(p);
    return out;
  }

  Checkpoint<T> to_checkpoint() const {
    Checkpoint<T> c;
    c.meta["kind"] = "model";
    c.meta["model.task"] = task_name(task);
    c.meta["model.head"] = head_kind == HeadKind::Linear ? "linear" : "refine";
    vit.to_meta(c.meta);
    decoder_config.to_meta(c.meta);
    normalization.to_meta(c.meta);
    for (auto& [name, t] : const_cast<Model*>(this)->named_parameters()) c.tensors[name] = t->detach();
    return c;
  }

  static Model from_checkpoint(const Checkpoint<T>& c) {
    const auto kind = c.meta_or("kind", "");
    if (kind != "model" && kind != "encoder") {
      throw CheckpointError("checkpoint kind '" + kind + "' is not a model (adapt a pretrained checkpoint first)");
    }
    Model m;
    m.vit = ViTConfig::from_meta(c);
    m.vit.validate();
    m.normalization = Normalization::from_meta(c.meta);
    m.task = parse_task(c.meta_or("model.task", "flow"));
    m.head_kind = c.meta_or("model.head", "refine") == "linear" ? HeadKind::Linear : HeadKind::Refine;
    m.encoder.blocks.resize(static_cast<std::size_t>(m.vit.depth));
    for (auto& [name, ptr] : m.encoder.named_parameters("encoder.")) *ptr = c.at(name).detach();
    m.encoder.validate(m.vit);
    if (kind == "encoder") return m;
    m.decoder_config = DecoderConfig::from_meta(c);
    for (auto& [name, ptr] : m.decoder.named_parameters("decoder.")) *ptr = c.at(name).detach();
    for (auto& [name, ptr] : m.head.named_parameters("head.")) *ptr = c.at(name).detach();
    m.validate();
    return m;
  }

  /// Encoder-only checkpoint (what `adapt` emits).
  static Checkpoint<T> encoder_checkpoint(const ViTConfig& vit, const Normalization& norm, ViTWeights<T> enc) {
    Checkpoint<T> c;
    c.meta["kind"] = "encoder";
    vit.to_meta(c.meta);
    norm.to_meta(c.meta);
    for (auto& [name, ptr] : enc.named_parameters("encoder.")) c.tensors[name] = ptr->detach();
    return c;
  }

  void validate() const {
    encoder.validate(vit);
    decoder_config.validate();
    const auto shapes = decoder_param_shapes(decoder_config, vit.embed_dim, vit.patch);
    auto named = const_cast<DecoderWeights<T>&>(decoder).named_parameters();
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (!named[i].second->defined() || named[i].second->shape() != shapes[i].second) {
        throw ShapeError("decoder parameter " + named[i].first + " has the wrong shape");
      }
    }
    if (!head.w.defined() || head.w.shape() != Shape{out_channels() * vit.patch * vit.patch, vit.embed_dim}) {
      throw ShapeError("linear head weight has the wrong shape");
    }
  }
};

/// Fresh decoder/head around given (or random) encoder weights.
template <typename T>
Model<T> make_model(const ViTConfig& vit, const DecoderConfig& dcfg, Task task, std::mt19937_64& rng,
                    std::optional<ViTWeights<T>> encoder = std::nullopt) {
  Model<T> m;
  m.vit = vit;
  m.decoder_config = dcfg;
  m.task = task;
  m.encoder = encoder ? std::move(*encoder) : random_vit_weights<T>(vit, rng);
  m.decoder = random_decoder_weights<T>(dcfg, vit.embed_dim, vit.patch, rng);
  m.head = random_linear_head<T>(state_channels(task), vit.embed_dim, vit.patch, rng);
  m.validate();
  return m;
}

/// Raw images [N, 3, H, W] -> full-resolution predictions after each step
/// (refine head) or the single linear-head prediction. Units: pixels.
template <typename T>
std::vector<Tensor<T>> model_predictions(const Model<T>& m, const Tensor<T>& I1, const Tensor<T>& I2,
                                         const LoopOptions& opt) {
  auto a = m.normalization.apply(I1), b = m.normalization.apply(I2);
  if (m.head_kind == HeadKind::Linear) {
    auto f = encode_pair(a, b, m.encoder, m.vit);
    return {linear_head(f, m.head, m.out_channels(), m.vit.grid_h(), m.vit.grid_w(), m.vit.patch)};
  }
  const Task loop_task = m.task == Task::Depth ? Task::Flow : m.task;
  return refine_sequence(a, b, m.encoder, m.vit, m.decoder, m.decoder_config, loop_task, opt);
}

/// Inference on one raw image pair [3, H, W]. Depth requires cameras and
/// converts the final displacement once at the end.
template <typename T>
GeoField<T> run_inference(const Model<T>& m, const Tensor<T>& I1, const Tensor<T>& I2, std::int64_t iters,
                          const std::optional<CameraPair>& cams = std::nullopt, PadMode pad = PadMode::Clamp) {
  if (I1.rank() != 3 || I2.shape() != I1.shape()) throw ShapeError("run_inference: expected two [3, H, W] images");
  if (m.task == Task::Depth && !cams) throw ParamError("run_inference: depth task needs a camera pair");
  NoGradGuard no_grad;
  LoopOptions opt;
  opt.iters = iters;
  opt.pad = pad;
  const Shape batched{1, I1.dim(0), I1.dim(1), I1.dim(2)};
  auto preds = model_predictions(m, reshape(I1, batched), reshape(I2, batched), opt);
  const auto& last = preds.back();
  Tensor<T> out = reshape(last, {last.dim(1), last.dim(2), last.dim(3)}).detach();
  switch (m.task) {
    case Task::Flow: return GeoField<T>(FieldKind::Flow, out);
    case Task::Disparity: return GeoField<T>(FieldKind::Disparity, relu(out).detach());
    case Task::Depth: return displacement_to_depth(GeoField<T>(FieldKind::Flow, out), *cams);
  }
  return {};
}

}  // namespace geovit
