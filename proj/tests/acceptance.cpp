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

// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance            all criteria
//   acceptance --only X   a single criterion (X = name printed on its line)
//
// Exit status is nonzero when any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "geovit/geovit.hpp"
#include "grad_suite.hpp"
#include "metric_oracles.hpp"
#include "test_cameras.hpp"
#include "tiny_model.hpp"

using namespace geovit;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (!pass) detail << "; ";
      pass = false;
      detail << what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

void gradient_suite(Outcome& o) {
  int probes = 0;
  double worst = 0;
  for (const auto& spec : oracle::op_grad_specs()) {
    auto r = oracle::run_op_grad_spec(spec, 100, 2024);
    probes += r.probes;
    worst = std::max(worst, r.worst / spec.rtol);
    o.require(r.cases >= 100 && r.failures == 0, spec.name + " failed " + std::to_string(r.failures) + " probes");
  }

  // Custom ops of the geometry and decoder.
  std::mt19937_64 rng(77);
  int warp_fail = 0, up_fail = 0;
  for (int c = 0; c < 100; ++c) {
    const auto H = oracle::rand_int(rng, 2, 5), W = oracle::rand_int(rng, 2, 5);
    auto img = TensorD::randn({2, H, W}, rng);
    auto flow = oracle::rand_offgrid({2, H, W}, rng, -2.0, 2.0);
    auto w = TensorD::randn({2, H, W}, rng);
    const auto pad = static_cast<PadMode>(c % 3);
    auto ri = finite_diff_check([&](const TensorD& x) { return sum(mul(warp(x, flow, pad), w)); }, img, 1e-5, 1e-4);
    auto rf = finite_diff_check([&](const TensorD& f) { return sum(mul(warp(img, f, pad), w)); }, flow, 1e-5, 1e-4);
    warp_fail += !ri.passed + !rf.passed;
    probes += 2;
    worst = std::max({worst, ri.max_error / 1e-4, rf.max_error / 1e-4});

    const std::int64_t gh = oracle::rand_int(rng, 1, 3), gw = oracle::rand_int(rng, 1, 3), p = oracle::rand_int(rng, 1, 3);
    auto g = TensorD::randn({1, 2, gh, gw}, rng);
    auto logits = TensorD::randn({1, 9 * p * p, gh, gw}, rng);
    auto wu = TensorD::randn({1, 2, gh * p, gw * p}, rng);
    auto rg = finite_diff_check([&](const TensorD& x) { return sum(mul(convex_upsample(x, logits, p, double(p)), wu)); }, g);
    auto rl = finite_diff_check([&](const TensorD& x) { return sum(mul(convex_upsample(g, x, p, double(p)), wu)); }, logits);
    up_fail += !rg.passed + !rl.passed;
    probes += 2;
    worst = std::max({worst, rg.max_error / 1e-5, rl.max_error / 1e-5});
  }
  o.require(warp_fail == 0, "warp failed " + std::to_string(warp_fail) + " probes");
  o.require(up_fail == 0, "convex_upsample failed " + std::to_string(up_fail) + " probes");

  // End to end: T = 2 refinement loop of the tiny config (depth 1, dim 8, 16x16).
  auto m = oracle::tiny_model<double>(Task::Flow, 16);
  auto I1 = TensorD::randn({1, 3, 16, 16}, rng), I2 = TensorD::randn({1, 3, 16, 16}, rng);
  auto p1 = TensorD::randn({1, 2, 16, 16}, rng), p2 = TensorD::randn({1, 2, 16, 16}, rng);
  LoopOptions opt;
  opt.iters = 2;
  auto loop_loss = [&](const Model<double>& mm) {
    auto preds = refine_sequence(I1, I2, mm.encoder, mm.vit, mm.decoder, mm.decoder_config, Task::Flow, opt);
    return add(sum(mul(preds[0], p1)), sum(mul(preds[1], p2)));
  };
  int e2e_fail = 0;
  for (const char* name : {"encoder.pos_embed_spatial", "encoder.blocks.0.attn.qkv.weight", "decoder.gru.convz1.weight",
                           "decoder.flow_head.conv2.weight", "decoder.mask.conv2.weight"}) {
    Tensor<double>* target = nullptr;
    for (auto& [n, ptr] : m.named_parameters())
      if (n == name) target = ptr;
    if (!target) {
      o.require(false, std::string("no parameter ") + name);
      continue;
    }
    const auto saved = *target;
    auto r = finite_diff_check(
        [&](const TensorD& x) {
          *target = x;
          auto l = loop_loss(m);
          return l;
        },
        saved, 1e-5, 1e-4);
    *target = saved;
    ++probes;
    worst = std::max(worst, r.max_error / 1e-4);
    if (!r.passed) ++e2e_fail, o.detail << name << " err " << r.max_error << ' ';
  }
  o.require(e2e_fail == 0, "end-to-end loop failed " + std::to_string(e2e_fail) + " checks");
  o.detail << probes << " probes, worst error " << worst << " x tolerance";
}

// ---------------------------------------------------------------------------

// Bilinear resize with half-pixel centers and edge clamping, one channel.
double oracle_resize_at(const std::vector<double>& src, int h, int w, int H, int W, int y, int x) {
  auto coord = [](int i, int in, int out) { return std::max(0.0, (i + 0.5) * in / out - 0.5); };
  const double sy = coord(y, h, H), sx = coord(x, w, W);
  const int y0 = std::min(static_cast<int>(sy), h - 1), x0 = std::min(static_cast<int>(sx), w - 1);
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - y0, fx = sx - x0;
  return (1 - fy) * ((1 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1]) +
         fy * ((1 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1]);
}

void adaptation_surgery(Outcome& o) {
  ViTConfig pre;
  pre.image_h = pre.image_w = 64;
  pre.patch = 16;
  pre.pretrain_frames = 8;
  pre.temporal_patch = 2;
  pre.embed_dim = 16;
  pre.depth = 1;
  pre.num_heads = 2;
  auto ckpt = make_synthetic_pretrained<double>(pre, 99);
  ViTConfig target = pre;
  target.image_h = 48;
  target.image_w = 96;
  auto w = adapt_checkpoint(ckpt, target);
  const auto D = pre.embed_dim;
  double err = 0;

  const auto& tpos = ckpt.at("pos_embed_temporal");  // [4, D]
  for (std::int64_t d = 0; d < D; ++d) {
    err = std::max(err, std::abs(w.pos_temporal_src[d] - (tpos[0 * D + d] + tpos[1 * D + d]) / 2));
    err = std::max(err, std::abs(w.pos_temporal_tgt[d] - (tpos[2 * D + d] + tpos[3 * D + d]) / 2));
  }
  const auto& k3 = ckpt.at("patch_embed.proj.weight");  // [D, 3, 2, p, p]
  const auto plane = pre.patch * pre.patch;
  for (std::int64_t dc = 0; dc < D * 3; ++dc)
    for (std::int64_t i = 0; i < plane; ++i)
      err = std::max(err, std::abs(w.patch_w[dc * plane + i] - (k3[(dc * 2) * plane + i] + k3[(dc * 2 + 1) * plane + i])));

  const auto& sp = ckpt.at("pos_embed_spatial");  // [16, D] on a 4x4 grid
  for (std::int64_t d = 0; d < D; ++d) {
    std::vector<double> ch(16);
    for (int r = 0; r < 16; ++r) ch[r] = sp[r * D + d];
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 6; ++x)
        err = std::max(err, std::abs(w.pos_spatial[(y * 6 + x) * D + d] - oracle_resize_at(ch, 4, 4, 3, 6, y, x)));
  }

  auto ident = adapt_spatial_pos(sp, {4, 4}, {4, 4});
  for (std::int64_t i = 0; i < sp.numel(); ++i) err = std::max(err, std::abs(ident[i] - sp[i]));
  std::vector<double> cst;
  for (int r = 0; r < 6; ++r)
    for (double v : {0.75, -1.25}) cst.push_back(v);
  auto c = adapt_spatial_pos(TensorD({6, 2}, cst), {2, 3}, {5, 7});
  for (std::int64_t r = 0; r < 35; ++r)
    err = std::max({err, std::abs(c[r * 2] - 0.75), std::abs(c[r * 2 + 1] + 1.25)});
  auto mid = adapt_spatial_pos(TensorD({4, 1}, {0, 1, 2, 3}), {2, 2}, {3, 3});
  err = std::max(err, std::abs(mid[4] - 1.5));

  o.require(err <= 1e-6, "max deviation " + std::to_string(err));
  o.detail << "8-frame checkpoint, max deviation " << err;
}

// ---------------------------------------------------------------------------

void warp_identities(Outcome& o) {
  std::mt19937_64 rng(5);
  bool ok = true;
  for (auto pad : {PadMode::Zeros, PadMode::Clamp, PadMode::Wrap}) {
    auto img = TensorF::randn({3, 9, 11}, rng);
    auto out = warp(img, TensorF::zeros({2, 9, 11}), pad);
    ok &= std::memcmp(out.data().data(), img.data().data(), sizeof(float) * img.numel()) == 0;
  }
  o.require(ok, "zero field is not a bit-exact identity");

  // Integer shift by (+1, 0): out[x] = img[x + 1], edge repeated under Clamp, 0 under Zeros, wrapped under Wrap.
  const TensorF row({1, 1, 4}, {0, 1, 2, 3});
  const TensorF shift({2, 1, 4}, {1, 1, 1, 1, 0, 0, 0, 0});
  o.require(warp(row, shift, PadMode::Clamp).vec() == std::vector<float>{1, 2, 3, 3}, "integer shift (clamp)");
  o.require(warp(row, shift, PadMode::Zeros).vec() == std::vector<float>{1, 2, 3, 0}, "integer shift (zeros)");
  o.require(warp(row, shift, PadMode::Wrap).vec() == std::vector<float>{1, 2, 3, 0}, "integer shift (wrap)");
  const TensorF col({1, 3, 1}, {5, 6, 7});
  const TensorF down({2, 3, 1}, {0, 0, 0, -1, -1, -1});
  o.require(warp(col, down, PadMode::Clamp).vec() == std::vector<float>{5, 5, 6}, "vertical shift");
  // Half pixel: the average of neighbours.
  o.require(warp(TensorF({1, 1, 2}, {0, 2}), TensorF({2, 1, 2}, {0.5f, 0.5f, 0, 0})).vec() == std::vector<float>{1, 2},
            "half-pixel shift");
  o.require(warp(TensorF({1, 2, 1}, {4, 8}), TensorF({2, 2, 1}, {0, 0, 0.5f, 0.5f})).vec() == std::vector<float>{6, 8},
            "vertical half-pixel shift");
  o.detail << "zero, integer and half-pixel cases exact";
}

// ---------------------------------------------------------------------------

void depth_round_trip(Outcome& o) {
  std::mt19937_64 rng(6);
  double worst = 0;
  std::int64_t checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto cams = oracle::random_camera_pair(rng, 12, 16);
    GeoField<double> depth(FieldKind::Depth, TensorD::uniform({1, 12, 16}, rng, 2.0, 40.0));
    auto back = displacement_to_depth(depth_to_displacement(depth, cams), cams);
    for (std::int64_t i = 0; i < depth.pixels(); ++i) {
      if (!back.is_valid(i)) continue;
      worst = std::max(worst, std::abs(back.data[i] - depth.data[i]) / depth.data[i]);
      ++checked;
    }
  }
  o.require(worst <= 1e-6, "worst relative error " + std::to_string(worst));
  o.require(checked >= 100 * 12 * 16 * 9 / 10, "too few valid pixels: " + std::to_string(checked));

  const double fx = 120, b = 0.3;
  auto cams = CameraPair::rectified(fx, fx, 8, 6, b);
  std::vector<double> uv(2 * 48, 0.0);
  for (int i = 0; i < 48; ++i) uv[i] = -(0.5 + 0.25 * i);
  auto d = displacement_to_depth(GeoField<double>(FieldKind::Flow, TensorD({2, 6, 8}, uv)), cams);
  double rect = 0;
  for (int i = 0; i < 48; ++i) rect = std::max(rect, std::abs(d.data[i] - fx * b / -uv[i]) / (fx * b / -uv[i]));
  o.require(rect <= 1e-6, "rectified case error " + std::to_string(rect));
  o.detail << "100 camera pairs, worst rel " << worst << ", rectified rel " << rect;
}

// ---------------------------------------------------------------------------

void metric_oracles(Outcome& o) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-6, 6);
  std::bernoulli_distribution keep(0.8);
  double worst = 0;
  auto track = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
  for (int trial = 0; trial < 100; ++trial) {
    oracle::FlowArrays a;
    std::vector<std::uint8_t> m;
    for (int i = 0; i < 64; ++i) {
      a.gu.push_back(u(rng)), a.gv.push_back(u(rng));
      a.pu.push_back(a.gu.back() + u(rng)), a.pv.push_back(a.gv.back() + u(rng));
      m.push_back(keep(rng) || i == 0);
      a.valid.push_back(m.back());
    }
    std::vector<double> puv = a.pu, guv = a.gu;
    puv.insert(puv.end(), a.pv.begin(), a.pv.end());
    guv.insert(guv.end(), a.gv.begin(), a.gv.end());
    GeoField<double> p(FieldKind::Flow, TensorD({2, 8, 8}, puv)), g(FieldKind::Flow, TensorD({2, 8, 8}, guv), m);
    track(epe(p, g), oracle::brute_epe(a));
    track(f1_all(p, g), oracle::brute_f1(a, false));
    track(f1_all(p, g, nullptr, F1Rule::PaperOr), oracle::brute_f1(a, true));

    std::vector<double> pd, gd;
    for (int i = 0; i < 64; ++i) pd.push_back(std::abs(a.pu[i]) + 0.1), gd.push_back(std::abs(a.gu[i]) + 0.1);
    GeoField<double> pdf(FieldKind::Disparity, TensorD({1, 8, 8}, pd)), gdf(FieldKind::Disparity, TensorD({1, 8, 8}, gd), m);
    for (double n : {1.0, 2.0, 4.0}) track(bad_np(pdf, gdf, n), oracle::brute_bad(pd, gd, a.valid, n));
    auto dm = depth_metrics(GeoField<double>(FieldKind::Depth, TensorD({1, 8, 8}, pd)),
                            GeoField<double>(FieldKind::Depth, TensorD({1, 8, 8}, gd), m));
    auto ref = oracle::brute_depth(pd, gd, a.valid);
    track(dm.abs_rel, ref[0]);
    track(dm.sq_rel, ref[1]);
    track(dm.rmse, ref[2]);
    track(dm.rmse_log, ref[3]);

    // Two-step sequence loss against 0.9 * d1 + d2 with masked per-pixel L1 means.
    std::vector<double> g1, g2;
    for (int i = 0; i < 128; ++i) g1.push_back(u(rng)), g2.push_back(u(rng));
    auto l1_mean = [&](const std::vector<double>& q) {
      double s = 0;
      int n = 0;
      for (int i = 0; i < 64; ++i)
        if (m[i]) s += std::abs(q[i] - guv[i]) + std::abs(q[64 + i] - guv[64 + i]), ++n;
      return s / n;
    };
    GeoField<double> f1(FieldKind::Flow, TensorD({2, 8, 8}, g1)), f2(FieldKind::Flow, TensorD({2, 8, 8}, g2));
    track(sequence_loss<double>({f1, f2}, g, LossConfig{}), 0.9 * l1_mean(g1) + l1_mean(g2));
  }
  o.require(worst <= 1e-6, "max deviation " + std::to_string(worst));
  o.detail << "100 random 8x8 cases, max deviation " << worst;
}

// ---------------------------------------------------------------------------

ViTConfig toy_vit() {
  ViTConfig v;
  v.image_h = 64;
  v.image_w = 96;
  v.patch = 16;
  v.embed_dim = 64;
  v.depth = 2;
  v.num_heads = 2;
  return v;
}

std::vector<SyntheticSample<float>> toy_data() {
  std::vector<SyntheticSample<float>> data;
  for (int i = 0; i < 20; ++i) data.push_back(make_synthetic<float>(FieldKind::Flow, 64, 96, 1000 + i));
  return data;
}

void toy_overfit(Outcome& o) {
  const auto data = toy_data();
  std::mt19937_64 rng(0);
  auto m = make_model<float>(toy_vit(), DecoderConfig{}, Task::Flow, rng);
  TrainConfig cfg;
  cfg.steps = 300;
  cfg.batch = 4;
  cfg.pct_start = 0.1;
  cfg.loss.iters = 4;
  const auto before = per_iteration_error(m, data, 4);
  const auto t0 = std::chrono::steady_clock::now();
  train_toy(m, data, cfg);
  const double secs = seconds_since(t0);
  const auto err = per_iteration_error(m, data, 4);
  o.require(err.back() < 0.5, "training EPE " + std::to_string(err.back()) + " >= 0.5");
  o.require(err.back() < err.front(), "EPE(g_T) not below EPE(g_1)");
  o.require(secs < 1800, "took " + std::to_string(secs) + " s");
  o.detail << "EPE " << before.back() << " -> " << err.back() << " in 300 steps (" << static_cast<int>(secs)
           << " s); per iteration";
  for (double e : err) o.detail << ' ' << e;
}

void linear_head(Outcome& o) {
  const auto data = toy_data();
  const auto vit = toy_vit();
  ViTConfig pre = vit;
  pre.image_h = pre.image_w = 128;
  auto enc = adapt_checkpoint(make_synthetic_pretrained<float>(pre, 7), vit);
  std::mt19937_64 rng(0);
  auto m = make_model<float>(vit, DecoderConfig{}, Task::Flow, rng, enc);
  m.head_kind = HeadKind::Linear;
  TrainConfig cfg;
  cfg.steps = 300;
  cfg.batch = 4;
  cfg.max_lr = 1e-2;
  cfg.freeze_encoder = true;

  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto full = detail::make_batch(data, all, Task::Flow, cfg.depth_loss);
  auto set_loss = [&] {
    NoGradGuard g;
    return static_cast<double>(batch_loss(m, full, cfg).item());
  };
  const auto encoder_before = m.encoder.patch_w.vec();
  const double l0 = set_loss();
  train_toy(m, data, cfg);
  const double l1 = set_loss();
  o.require(m.encoder.patch_w.vec() == encoder_before, "encoder changed");
  const double reduction = 1.0 - l1 / l0;
  o.require(reduction >= 0.5, "loss reduced by " + std::to_string(100 * reduction) + "% (< 50%); ");
  o.detail << "training-set loss " << l0 << " -> " << l1 << " (" << 100 * reduction << "% reduction)";
}

// ---------------------------------------------------------------------------

void stereo_reduction(Outcome& o) {
  auto m = oracle::tiny_model<double>(Task::Flow, 20, 32, 32);
  double worst = 0, vmax = 0;
  for (int s = 0; s < 3; ++s) {
    auto sample = make_synthetic<double>(FieldKind::Disparity, 32, 32, 500 + s, SyntheticParams{4.0, 4});
    const Shape b{1, 3, 32, 32};
    auto I1 = m.normalization.apply(reshape(sample.I1, b)), I2 = m.normalization.apply(reshape(sample.I2, b));
    LoopOptions opt;
    opt.iters = 4;
    opt.zero_vertical = true;
    auto flow = refine_sequence(I1, I2, m.encoder, m.vit, m.decoder, m.decoder_config, Task::Flow, opt);
    opt.zero_vertical = false;
    auto disp = refine_sequence(I1, I2, m.encoder, m.vit, m.decoder, m.decoder_config, Task::Disparity, opt);
    for (std::size_t t = 0; t < flow.size(); ++t)
      for (std::int64_t i = 0; i < 32 * 32; ++i) {
        // disparity d is the horizontal flow -d
        worst = std::max(worst, std::abs(disp[t][i] + flow[t][i]));
        vmax = std::max(vmax, std::abs(flow[t][32 * 32 + i]));
      }
  }
  o.require(worst <= 1e-5, "max |d + u| " + std::to_string(worst));
  o.require(vmax == 0.0, "flow pipeline produced vertical motion");
  o.detail << "3 pairs x 4 iterations, max |d - (-u)| " << worst;
}

// ---------------------------------------------------------------------------

void tiling(Outcome& o) {
  auto m = oracle::tiny_model<float>(Task::Flow, 30, 32, 48);
  std::mt19937_64 rng(31);
  auto a = TensorF::uniform({3, 32, 48}, rng, 0, 1), b = TensorF::uniform({3, 32, 48}, rng, 0, 1);
  auto direct = run_inference(m, a, b, 3);
  auto tiled = tiled_run_inference(m, a, b, 3);
  o.require(std::memcmp(direct.data.data().data(), tiled.data.data().data(), sizeof(float) * direct.data.numel()) == 0,
            "single-tile plan differs from untiled inference");

  struct Case {
    std::int64_t H, W, th, tw, stride;
  };
  std::vector<Case> cases{{500, 900, 416, 736, 224}};
  std::uniform_int_distribution<std::int64_t> len(16, 600);
  while (cases.size() < 20) {
    Case c;
    c.th = len(rng), c.tw = len(rng);
    c.H = c.th + len(rng) / 2, c.W = c.tw + len(rng) / 2;
    c.stride = cases.size() % 4 == 0 && std::min(c.th, c.tw) >= 224
                   ? 224
                   : std::uniform_int_distribution<std::int64_t>(1, std::min(c.th, c.tw))(rng);
    cases.push_back(c);
  }
  int with_224 = 0;
  double worst = 0;
  for (const auto& c : cases) {
    with_224 += c.stride == 224;
    auto plan = make_tile_plan(c.H, c.W, c.th, c.tw, c.stride);
    const auto maps = plan.weight_maps();
    std::vector<double> total(static_cast<std::size_t>(c.H * c.W), 0.0);
    std::vector<int> cover(static_cast<std::size_t>(c.H * c.W), 0);
    for (std::size_t k = 0; k < plan.tiles.size(); ++k) {
      const auto [oy, ox] = plan.tiles[k];
      o.require(oy >= 0 && ox >= 0 && oy + c.th <= c.H && ox + c.tw <= c.W, "tile outside the image");
      for (std::int64_t i = 0; i < c.th; ++i)
        for (std::int64_t j = 0; j < c.tw; ++j) {
          total[(oy + i) * c.W + ox + j] += maps[k][i * c.tw + j];
          cover[(oy + i) * c.W + ox + j] += 1;
        }
    }
    for (std::size_t p = 0; p < total.size(); ++p) {
      o.require(cover[p] > 0, "uncovered pixel");
      worst = std::max(worst, std::abs(total[p] - 1.0));
    }
  }
  o.require(worst <= 1e-6, "blend weights off by " + std::to_string(worst));
  o.require(with_224 >= 2, "stride 224 not exercised");
  o.detail << "single tile bit-exact; 20 plans (" << with_224 << " at stride 224), max |sum w - 1| " << worst;
}

// ---------------------------------------------------------------------------

bool same_bits(float a, float b) { return std::memcmp(&a, &b, sizeof(float)) == 0; }

void format_round_trips(Outcome& o) {
  std::mt19937_64 rng(40);
  const auto dir = std::filesystem::temp_directory_path() / ("geovit_accept_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  int flo_bad = 0, pfm_bad = 0, png_bad = 0;
  double png_worst = 0;
  std::uniform_real_distribution<float> big(-500.0f, 500.0f), pos(0.0f, 300.0f);
  for (int trial = 0; trial < 100; ++trial) {
    const auto H = 1 + static_cast<std::int64_t>(rng() % 24), W = 1 + static_cast<std::int64_t>(rng() % 24);
    std::vector<float> uv(static_cast<std::size_t>(2 * H * W)), d(static_cast<std::size_t>(H * W));
    for (auto& v : uv) v = big(rng);
    for (auto& v : d) v = pos(rng);
    GeoField<float> flow(FieldKind::Flow, TensorF({2, H, W}, uv));
    write_flo((dir / "f.flo").string(), flow);
    auto f2 = read_flo((dir / "f.flo").string());
    for (std::int64_t i = 0; i < flow.data.numel(); ++i) flo_bad += !same_bits(f2.data[i], flow.data[i]);

    GeoField<float> disp(FieldKind::Disparity, TensorF({1, H, W}, d));
    write_pfm((dir / "d.pfm").string(), disp);
    auto d2 = read_pfm((dir / "d.pfm").string());
    for (std::int64_t i = 0; i < disp.data.numel(); ++i) pfm_bad += !same_bits(d2.data[i], disp.data[i]);

    std::vector<std::uint8_t> mask(static_cast<std::size_t>(H * W));
    for (auto& v : mask) v = rng() % 5 != 0;
    GeoField<float> kf(FieldKind::Flow, TensorF({2, H, W}, uv), mask);
    write_kitti_png((dir / "k.png").string(), kf);
    auto k2 = read_kitti_png((dir / "k.png").string());
    png_bad += k2.mask() != kf.mask();
    for (std::int64_t i = 0; i < H * W; ++i) {
      if (!kf.is_valid(i)) continue;
      png_worst = std::max({png_worst, std::abs(double(k2.data[i]) - kf.data[i]),
                            std::abs(double(k2.data[H * W + i]) - kf.data[H * W + i])});
    }
  }
  std::filesystem::remove_all(dir);
  o.require(flo_bad == 0, ".flo not bit-exact");
  o.require(pfm_bad == 0, "PFM not bit-exact");
  o.require(png_bad == 0, "KITTI PNG lost validity");
  o.require(png_worst <= 1.0 / 128, "KITTI PNG error " + std::to_string(png_worst));
  o.detail << "100 fields each; .flo and PFM bit-exact, KITTI max error " << png_worst << " px";
}

struct Criterion {
  const char* name;
  void (*run)(Outcome&);
};

const Criterion kCriteria[] = {
    {"gradient-suite", gradient_suite},   {"adaptation-surgery", adaptation_surgery},
    {"warp-identities", warp_identities}, {"depth-round-trip", depth_round_trip},
    {"metric-oracles", metric_oracles},   {"toy-overfit", toy_overfit},
    {"linear-head", linear_head},         {"stereo-reduction", stereo_reduction},
    {"tiling", tiling},                   {"format-round-trips", format_round_trips},
};

}  // namespace

int main(int argc, char** argv) {
  std::string only;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--only" && i + 1 < argc) {
      only = argv[++i];
    } else if (std::string(argv[i]) == "--list") {
      for (const auto& c : kCriteria) std::printf("%s\n", c.name);
      return 0;
    } else {
      std::fprintf(stderr, "usage: acceptance [--only NAME | --list]\n");
      return 2;
    }
  }
  configure_threads();
  int failed = 0, ran = 0;
  for (const auto& c : kCriteria) {
    if (!only.empty() && only != c.name) continue;
    ++ran;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    failed += !o.pass;
    std::printf("%s %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.str().c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  if (ran == 0) {
    std::fprintf(stderr, "unknown criterion '%s'\n", only.c_str());
    return 2;
  }
  return failed ? 1 : 0;
}
