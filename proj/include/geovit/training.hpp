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

// Sequence loss, optimizer, learning-rate schedule and the toy training loop.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "geovit/metrics.hpp"
#include "geovit/refinement.hpp"
#include "geovit/synthetic.hpp"

namespace geovit {

struct LossConfig {
  double gamma = 0.9;
  std::int64_t iters = 6;

  void validate() const {
    if (!(gamma > 0 && gamma <= 1)) throw ParamError("LossConfig: gamma must lie in (0, 1]");
    if (iters < 1) throw ParamError("LossConfig: iters must be >= 1");
  }
};

/// Masked mean over pixels of the per-pixel L1 norm (sum over channels).
/// pred, y: [N, c, H, W]; mask: [N, 1, H, W] of 0/1.
template <typename T>
Tensor<T> masked_l1(const Tensor<T>& pred, const Tensor<T>& y, const Tensor<T>& mask) {
  if (pred.shape() != y.shape()) {
    throw ShapeError("loss: prediction " + to_string(pred.shape()) + " vs target " + to_string(y.shape()));
  }
  const Shape ms{pred.dim(0), 1, pred.dim(2), pred.dim(3)};
  if (mask.shape() != ms) throw ShapeError("loss: mask " + to_string(mask.shape()) + " expected " + to_string(ms));
  double count = 0;
  for (T v : mask.vec()) count += v != T(0);
  if (count == 0) throw EmptyMaskError("loss: no valid pixels");
  auto per_pixel = sum(abs(sub(pred, y)), 1, true);
  return scale(sum(mul(per_pixel, mask)), static_cast<T>(1.0 / count));
}

/// sum_t gamma^(T - t) * masked_l1(g_t, y), t = 1..T.
template <typename T>
Tensor<T> sequence_loss(const std::vector<Tensor<T>>& preds, const Tensor<T>& y, const Tensor<T>& mask, double gamma) {
  if (preds.empty()) throw ParamError("sequence_loss: no predictions");
  if (!(gamma > 0 && gamma <= 1)) throw ParamError("sequence_loss: gamma must lie in (0, 1]");
  const auto n = static_cast<std::int64_t>(preds.size());
  Tensor<T> total;
  for (std::int64_t t = 0; t < n; ++t) {
    auto term = scale(masked_l1(preds[t], y, mask), static_cast<T>(std::pow(gamma, static_cast<double>(n - 1 - t))));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

/// Field-level convenience: full-resolution predictions against a ground-truth field.
template <typename T>
double sequence_loss(const std::vector<GeoField<T>>& preds, const GeoField<T>& y, const LossConfig& cfg) {
  cfg.validate();
  NoGradGuard guard;
  std::vector<Tensor<T>> p;
  for (const auto& g : preds) p.push_back(reshape(g.data, {1, g.channels(), g.height(), g.width()}));
  auto m = y.mask();
  std::vector<T> mv(m.begin(), m.end());
  for (const auto& g : preds)
    for (std::int64_t i = 0; i < g.pixels(); ++i)
      if (!g.is_valid(i)) mv[i] = T(0);
  return static_cast<double>(
      sequence_loss(p, reshape(y.data, {1, y.channels(), y.height(), y.width()}),
                    Tensor<T>({1, 1, y.height(), y.width()}, mv), cfg.gamma)
          .item());
}

// ---------------------------------------------------------------------------
// Optimization

/// Adam with decoupled weight decay.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>*> params, double weight_decay = 1e-4, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : params_(std::move(params)), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.emplace_back(static_cast<std::size_t>(p->numel()), 0.0);
      v_.emplace_back(static_cast<std::size_t>(p->numel()), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_)), c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto* p = params_[k];
      if (!p->has_grad()) continue;
      auto data = p->mutable_data();
      const auto grad = p->grad_data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double g = grad[i];
        m[i] = b1_ * m[i] + (1 - b1_) * g;
        v[i] = b2_ * v[i] + (1 - b2_) * g * g;
        double x = static_cast<double>(data[i]) * (1.0 - lr * wd_);
        x -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        data[i] = static_cast<T>(x);
      }
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  std::vector<Tensor<T>*> params_;
  double wd_, b1_, b2_, eps_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

/// Scales all gradients so their joint L2 norm is at most max_norm; returns the pre-clip norm.
template <typename T>
double clip_grad_norm(const std::vector<Tensor<T>*>& params, double max_norm) {
  double sq = 0;
  for (auto* p : params)
    if (p->has_grad())
      for (T g : p->grad_data()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const T k = static_cast<T>(max_norm / norm);
    for (auto* p : params)
      if (p->has_grad())
        for (T& g : p->mutable_grad_data()) g *= k;
  }
  return norm;
}

/// One-cycle policy: cosine warmup from max_lr/div_factor to max_lr over the
/// first pct_start of the steps, then cosine annealing to
/// max_lr/(div_factor*final_div_factor).
struct OneCycleSchedule {
  double max_lr = 4e-4;
  std::int64_t total_steps = 300;
  double pct_start = 0.05;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  std::int64_t peak_step() const {
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(pct_start * total_steps)) - 1);
  }

  double lr(std::int64_t step) const {
    const double initial = max_lr / div_factor, final_lr = initial / final_div_factor;
    auto cosine = [](double from, double to, double frac) {
      return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * std::clamp(frac, 0.0, 1.0)));
    };
    const auto peak = peak_step();
    if (step <= peak) return cosine(initial, max_lr, static_cast<double>(step) / peak);
    const auto last = std::max<std::int64_t>(total_steps - 1, peak + 1);
    return cosine(max_lr, final_lr, static_cast<double>(step - peak) / static_cast<double>(last - peak));
  }
};

// ---------------------------------------------------------------------------
// Toy training

enum class DepthLoss { InverseDepth, Displacement };

struct TrainConfig {
  std::int64_t steps = 300;
  std::int64_t batch = 4;
  double max_lr = 4e-4;
  double pct_start = 0.05;
  double weight_decay = 1e-4;
  double clip = 1.0;
  LossConfig loss;
  bool freeze_encoder = false;
  DepthLoss depth_loss = DepthLoss::InverseDepth;
  std::uint64_t seed = 0;
};

struct TrainRecord {
  std::int64_t step;
  double lr;
  double loss;
};

struct TrainResult {
  std::vector<TrainRecord> curve;
  double seconds = 0;
};

namespace detail {

// Stacks samples [idx...] into batched tensors.
template <typename T>
struct Batch {
  Tensor<T> I1, I2, target, mask;
  std::vector<CameraPair> cams;
};

template <typename T>
Batch<T> make_batch(const std::vector<SyntheticSample<T>>& data, const std::vector<std::size_t>& idx, Task task,
                    DepthLoss depth_loss) {
  Batch<T> b;
  std::vector<Tensor<T>> i1, i2, tg, mk;
  for (auto k : idx) {
    const auto& s = data[k];
    const auto H = s.I1.dim(1), W = s.I1.dim(2);
    i1.push_back(reshape(s.I1, {1, 3, H, W}));
    i2.push_back(reshape(s.I2, {1, 3, H, W}));
    auto m = s.gt.mask();
    std::vector<T> mv(m.begin(), m.end());
    Tensor<T> target;
    if (task == Task::Depth) {
      if (!s.cams) throw ParamError("training: depth sample without cameras");
      b.cams.push_back(*s.cams);
      if (depth_loss == DepthLoss::InverseDepth) {
        std::vector<T> inv(static_cast<std::size_t>(H * W));
        for (std::int64_t i = 0; i < H * W; ++i) inv[i] = T(1) / s.gt.data[i];
        target = Tensor<T>({1, 1, H, W}, inv);
      } else {
        auto f = depth_to_displacement(s.gt, *s.cams);
        for (std::int64_t i = 0; i < H * W; ++i)
          if (!f.is_valid(i)) mv[i] = T(0);
        target = reshape(f.data, {1, 2, H, W});
      }
    } else {
      target = reshape(s.gt.data, {1, s.gt.channels(), H, W});
    }
    tg.push_back(target);
    mk.push_back(Tensor<T>({1, 1, H, W}, mv));
  }
  NoGradGuard guard;
  b.I1 = concat(i1, 0).detach();
  b.I2 = concat(i2, 0).detach();
  b.target = concat(tg, 0).detach();
  b.mask = concat(mk, 0).detach();
  return b;
}

}  // namespace detail

/// Parameters updated by training for the model's head kind.
template <typename T>
std::vector<Tensor<T>*> trainable_parameters(Model<T>& m, bool freeze_encoder) {
  std::vector<Tensor<T>*> out;
  if (!freeze_encoder)
    for (auto& p : m.encoder.named_parameters()) out.push_back(p.second);
  if (m.head_kind == HeadKind::Linear) {
    for (auto& p : m.head.named_parameters()) out.push_back(p.second);
  } else {
    for (auto& p : m.decoder.named_parameters()) out.push_back(p.second);
  }
  return out;
}

/// Loss of a batch (records the graph when parameters require grad).
template <typename T>
Tensor<T> batch_loss(const Model<T>& m, const detail::Batch<T>& b, const TrainConfig& cfg) {
  LoopOptions opt;
  opt.iters = m.head_kind == HeadKind::Linear ? 1 : cfg.loss.iters;
  auto preds = model_predictions(m, b.I1, b.I2, opt);
  if (m.task == Task::Depth && cfg.depth_loss == DepthLoss::InverseDepth) {
    for (auto& p : preds) {
      std::vector<Tensor<T>> per;
      for (std::size_t n = 0; n < b.cams.size(); ++n) {
        const auto k = static_cast<std::int64_t>(n);
        per.push_back(inverse_depth_from_flow(slice(p, 0, k, k + 1), b.cams[n]));
      }
      p = concat(per, 0);
    }
  }
  return sequence_loss(preds, b.target, b.mask, cfg.loss.gamma);
}

/// Optimizes the model in place. Throws DivergenceError (leaving the
/// parameters of the last finite step) if the loss or gradients stop being finite.
template <typename T>
TrainResult train_toy(Model<T>& m, const std::vector<SyntheticSample<T>>& data, const TrainConfig& cfg,
                      const std::function<void(const TrainRecord&)>& on_step = {}) {
  if (data.empty()) throw ParamError("train_toy: empty dataset");
  if (cfg.steps < 1 || cfg.batch < 1) throw ParamError("train_toy: steps and batch must be positive");
  cfg.loss.validate();
  const auto t0 = std::chrono::steady_clock::now();
  auto params = trainable_parameters(m, cfg.freeze_encoder);
  for (auto* p : params) p->set_requires_grad(true);
  AdamW<T> opt(params, cfg.weight_decay);
  OneCycleSchedule sched{cfg.max_lr, cfg.steps, cfg.pct_start};
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  TrainResult result;
  const auto bs = static_cast<std::size_t>(std::min<std::int64_t>(cfg.batch, static_cast<std::int64_t>(data.size())));
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> idx;
    while (idx.size() < bs) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    auto batch = detail::make_batch(data, idx, m.task, cfg.depth_loss);
    for (auto* p : params) p->zero_grad();
    auto loss = batch_loss(m, batch, cfg);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) throw DivergenceError("train_toy: non-finite loss at step " + std::to_string(step));
    backward(loss);
    const double gnorm = clip_grad_norm(params, cfg.clip);
    if (!std::isfinite(gnorm)) throw DivergenceError("train_toy: non-finite gradient at step " + std::to_string(step));
    const double lr = sched.lr(step);
    opt.step(lr);
    TrainRecord rec{step, lr, value};
    result.curve.push_back(rec);
    if (on_step) on_step(rec);
  }
  for (auto* p : params) p->set_requires_grad(false);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

/// Mean EPE (flow) or mean absolute error (disparity) after each iteration
/// over a dataset; index t holds the error of g_{t+1}.
template <typename T>
std::vector<double> per_iteration_error(const Model<T>& m, const std::vector<SyntheticSample<T>>& data,
                                        std::int64_t iters) {
  NoGradGuard guard;
  LoopOptions opt;
  opt.iters = iters;
  std::vector<double> acc;
  for (const auto& s : data) {
    const auto H = s.I1.dim(1), W = s.I1.dim(2);
    auto preds = model_predictions(m, reshape(s.I1, {1, 3, H, W}), reshape(s.I2, {1, 3, H, W}), opt);
    acc.resize(preds.size(), 0.0);
    for (std::size_t t = 0; t < preds.size(); ++t) {
      GeoField<T> p(s.gt.kind == FieldKind::Disparity ? FieldKind::Disparity : FieldKind::Flow,
                    reshape(preds[t], {preds[t].dim(1), H, W}));
      if (s.gt.kind == FieldKind::Flow) {
        acc[t] += epe(p, s.gt);
      } else {
        acc[t] += field_metrics(GeoField<T>(FieldKind::Disparity, relu(p.data)), s.gt).at("epe");
      }
    }
  }
  for (auto& v : acc) v /= static_cast<double>(data.size());
  return acc;
}

}  // namespace geovit
