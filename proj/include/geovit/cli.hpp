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

// Command-line front end: adapt, train-toy, infer, eval, viz, make-data.
// Exit status: 0 success, 1 usage, 2 data/format error, 3 numeric divergence.
//
// Sample directory layout (make-data output, train-toy --data input):
//   <root>/sample_0000/img1.png, img2.png, flow.flo | disp.pfm | depth.pfm [, cams.txt]

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "geovit/config.hpp"
#include "geovit/formats.hpp"
#include "geovit/inference.hpp"
#include "geovit/metrics.hpp"
#include "geovit/synthetic.hpp"
#include "geovit/training.hpp"
#include "geovit/visualize.hpp"

namespace geovit::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kDiverged = 3 };

// ---------------------------------------------------------------------------
// Camera files: key = value with K_src, K_tgt, R (9 numbers, row-major) and t (3).

inline CameraPair read_cameras(const std::string& path) {
  const auto c = KeyValueConfig::load(path);
  auto mat = [&](const std::string& key) {
    const auto v = c.get_numbers(key);
    if (v.size() != 9) throw FormatError(path + ": '" + key + "' needs 9 numbers");
    Eigen::Matrix3d m;
    for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = v[i];
    return m;
  };
  CameraPair cams;
  cams.K_src = mat("K_src");
  cams.K_tgt = mat("K_tgt");
  cams.R = mat("R");
  const auto t = c.get_numbers("t");
  if (t.size() != 3) throw FormatError(path + ": 't' needs 3 numbers");
  cams.t = Eigen::Vector3d(t[0], t[1], t[2]);
  c.check_all_used();
  cams.validate();
  return cams;
}

inline void write_cameras(const std::string& path, const CameraPair& cams) {
  std::ofstream f(path);
  if (!f) throw FormatError("cannot write '" + path + "'");
  f << std::setprecision(17);
  auto mat = [&](const char* key, const Eigen::Matrix3d& m) {
    f << key << " =";
    for (int i = 0; i < 9; ++i) f << ' ' << m(i / 3, i % 3);
    f << '\n';
  };
  mat("K_src", cams.K_src);
  mat("K_tgt", cams.K_tgt);
  mat("R", cams.R);
  f << "t = " << cams.t[0] << ' ' << cams.t[1] << ' ' << cams.t[2] << '\n';
}

// ---------------------------------------------------------------------------
// Sample directories

inline std::string gt_file_name(FieldKind k) {
  switch (k) {
    case FieldKind::Flow: return "flow.flo";
    case FieldKind::Disparity: return "disp.pfm";
    case FieldKind::Depth: return "depth.pfm";
  }
  return "";
}

inline void write_sample(const fs::path& dir, const SyntheticSample<float>& s) {
  fs::create_directories(dir);
  write_image_png((dir / "img1.png").string(), s.I1);
  write_image_png((dir / "img2.png").string(), s.I2);
  write_field((dir / gt_file_name(s.gt.kind)).string(), s.gt);
  if (s.cams) write_cameras((dir / "cams.txt").string(), *s.cams);
}

inline SyntheticSample<float> read_sample(const fs::path& dir) {
  SyntheticSample<float> s;
  s.I1 = read_image_png<float>((dir / "img1.png").string());
  s.I2 = read_image_png<float>((dir / "img2.png").string());
  bool found = false;
  for (auto k : {FieldKind::Flow, FieldKind::Disparity, FieldKind::Depth}) {
    const auto p = dir / gt_file_name(k);
    if (!fs::exists(p)) continue;
    s.gt = read_field<float>(p.string(), k);
    found = true;
    break;
  }
  if (!found) throw FormatError("sample '" + dir.string() + "' has no flow.flo, disp.pfm or depth.pfm");
  if (fs::exists(dir / "cams.txt")) s.cams = read_cameras((dir / "cams.txt").string());
  if (s.I1.shape() != s.I2.shape() || s.I1.dim(1) != s.gt.height() || s.I1.dim(2) != s.gt.width()) {
    throw FormatError("sample '" + dir.string() + "': image and ground-truth sizes differ");
  }
  return s;
}

inline std::vector<SyntheticSample<float>> read_samples(const fs::path& root) {
  if (!fs::is_directory(root)) throw FormatError("'" + root.string() + "' is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<SyntheticSample<float>> out;
  for (const auto& d : dirs) out.push_back(read_sample(d));
  if (out.empty()) throw FormatError("no sample directories under '" + root.string() + "'");
  return out;
}

// ---------------------------------------------------------------------------
// train-toy configuration

struct ToyRun {
  ViTConfig vit;
  DecoderConfig decoder;
  Task task = Task::Flow;
  HeadKind head = HeadKind::Refine;
  std::string encoder_path;
  std::string data_dir;
  std::int64_t pairs = 20;
  std::uint64_t data_seed = 1000;
  SyntheticParams synth;
  TrainConfig train;
};

/// Defaults form the toy preset: ViT depth 2, dim 64, heads 2, patch 16,
/// 64x96 images, T = 4, 300 steps (10% warm-up) on 20 synthetic flow pairs.
inline ToyRun parse_toy_config(const KeyValueConfig& c) {
  ToyRun r;
  r.task = parse_task(c.get_string("task", "flow"));
  const auto head = c.get_string("head", "refine");
  if (head != "refine" && head != "linear") throw ParamError("config: head must be 'refine' or 'linear'");
  r.head = head == "linear" ? HeadKind::Linear : HeadKind::Refine;
  r.vit.image_h = c.get_int("image_h", 64);
  r.vit.image_w = c.get_int("image_w", 96);
  r.vit.patch = c.get_int("patch", 16);
  r.vit.embed_dim = c.get_int("embed_dim", 64);
  r.vit.depth = c.get_int("depth", 2);
  r.vit.num_heads = c.get_int("num_heads", 2);
  r.vit.mlp_ratio = c.get_double("mlp_ratio", 4.0);
  r.vit.pretrain_frames = c.get_int("pretrain_frames", 8);
  r.vit.temporal_patch = c.get_int("temporal_patch", 2);
  r.vit.validate();
  r.decoder.hidden = c.get_int("decoder.hidden", r.decoder.hidden);
  r.decoder.input = c.get_int("decoder.input", r.decoder.input);
  r.decoder.motion = c.get_int("decoder.motion", r.decoder.motion);
  r.decoder.motion_conv = c.get_int("decoder.motion_conv", r.decoder.motion_conv);
  r.decoder.head = c.get_int("decoder.head", r.decoder.head);
  r.decoder.mask_hidden = c.get_int("decoder.mask_hidden", r.decoder.mask_hidden);
  r.decoder.mask_scale = c.get_double("decoder.mask_scale", r.decoder.mask_scale);
  r.decoder.validate();
  r.encoder_path = c.get_string("encoder", "");
  r.data_dir = c.get_string("data", "");
  r.pairs = c.get_int("pairs", 20);
  r.data_seed = static_cast<std::uint64_t>(c.get_int("data_seed", 1000));
  r.synth.max_disp = c.get_double("max_disp", r.synth.max_disp);
  r.synth.patch = r.vit.patch;
  r.train.steps = c.get_int("steps", 300);
  r.train.batch = c.get_int("batch", 4);
  r.train.max_lr = c.get_double("max_lr", 4e-4);
  r.train.pct_start = c.get_double("pct_start", 0.1);
  r.train.weight_decay = c.get_double("weight_decay", 1e-4);
  r.train.clip = c.get_double("clip", 1.0);
  r.train.loss.gamma = c.get_double("gamma", 0.9);
  r.train.loss.iters = c.get_int("iters", 4);
  r.train.freeze_encoder = c.get_bool("freeze_encoder", false);
  const auto dl = c.get_string("depth_loss", "inverse");
  if (dl != "inverse" && dl != "displacement") throw ParamError("config: depth_loss must be 'inverse' or 'displacement'");
  r.train.depth_loss = dl == "inverse" ? DepthLoss::InverseDepth : DepthLoss::Displacement;
  r.train.seed = static_cast<std::uint64_t>(c.get_int("seed", 0));
  c.check_all_used();
  if (r.pairs < 1) throw ParamError("config: pairs must be >= 1");
  r.train.loss.validate();
  return r;
}

inline FieldKind task_field_kind(Task t) {
  switch (t) {
    case Task::Flow: return FieldKind::Flow;
    case Task::Disparity: return FieldKind::Disparity;
    case Task::Depth: return FieldKind::Depth;
  }
  return FieldKind::Flow;
}

/// Encoder weights (and normalization) from a pretrained, encoder or model checkpoint.
inline std::pair<ViTWeights<float>, Normalization> load_encoder(const std::string& path, const ViTConfig& vit) {
  const auto c = load_checkpoint<float>(path);
  if (c.meta_or("kind", "") == "pretrained") {
    const auto p = PretrainedCheckpoint<float>::from_checkpoint(c);
    ViTConfig target = p.config;
    target.image_h = vit.image_h;
    target.image_w = vit.image_w;
    if (target.embed_dim != vit.embed_dim || target.depth != vit.depth || target.num_heads != vit.num_heads ||
        target.patch != vit.patch) {
      throw ParamError("encoder checkpoint architecture does not match the config");
    }
    return {adapt_checkpoint(p, target), p.normalization};
  }
  auto m = Model<float>::from_checkpoint(c);
  if (m.vit.image_h != vit.image_h || m.vit.image_w != vit.image_w || m.vit.embed_dim != vit.embed_dim ||
      m.vit.depth != vit.depth || m.vit.num_heads != vit.num_heads || m.vit.patch != vit.patch) {
    throw ParamError("encoder checkpoint geometry/architecture does not match the config (run adapt first)");
  }
  return {m.encoder, m.normalization};
}

// ---------------------------------------------------------------------------
// Subcommands

struct AdaptArgs {
  std::string in, out;
  std::int64_t image_h = 0, image_w = 0;
};

inline int cmd_adapt(const AdaptArgs& a, std::ostream& out) {
  const auto p = PretrainedCheckpoint<float>::from_checkpoint(load_checkpoint<float>(a.in));
  ViTConfig target = p.config;
  target.image_h = a.image_h;
  target.image_w = a.image_w;
  target.validate();
  auto enc = adapt_checkpoint(p, target);
  save_checkpoint(a.out, Model<float>::encoder_checkpoint(target, p.normalization, enc));
  const auto [meta, entries] = read_manifest(a.out);
  for (const auto& e : entries) out << e.path << ' ' << detail::shape_token(e.shape) << '\n';
  out << "wrote " << a.out << " (" << entries.size() << " tensors, grid " << target.grid_h() << "x"
      << target.grid_w() << ")\n";
  return kOk;
}

struct TrainArgs {
  std::string config, out, curve, data;
  std::optional<std::int64_t> seed;
  bool quiet = false;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  auto kv = KeyValueConfig::load(a.config);
  if (!a.data.empty()) kv.set("data", a.data);
  if (a.seed) kv.set("seed", std::to_string(*a.seed));
  auto run = parse_toy_config(kv);

  std::vector<SyntheticSample<float>> data;
  if (!run.data_dir.empty()) {
    data = read_samples(run.data_dir);
  } else {
    for (std::int64_t i = 0; i < run.pairs; ++i)
      data.push_back(make_synthetic<float>(task_field_kind(run.task), run.vit.image_h, run.vit.image_w,
                                           run.data_seed + static_cast<std::uint64_t>(i), run.synth));
  }
  for (const auto& s : data) {
    if (s.gt.kind != task_field_kind(run.task)) throw FormatError("training data kind does not match the task");
    if (s.I1.dim(1) != run.vit.image_h || s.I1.dim(2) != run.vit.image_w) {
      throw FormatError("training images must be " + std::to_string(run.vit.image_h) + "x" +
                        std::to_string(run.vit.image_w));
    }
  }

  std::mt19937_64 rng(run.train.seed);
  std::optional<ViTWeights<float>> enc;
  Normalization norm;
  if (!run.encoder_path.empty()) {
    auto [w, n] = load_encoder(run.encoder_path, run.vit);
    enc = std::move(w);
    norm = n;
  }
  auto model = make_model<float>(run.vit, run.decoder, run.task, rng, enc);
  model.normalization = norm;
  model.head_kind = run.head;

  auto result = train_toy(model, data, run.train, [&](const TrainRecord& r) {
    if (!a.quiet && (r.step % 10 == 0 || r.step + 1 == run.train.steps)) {
      out << "step " << r.step << " lr " << std::setprecision(4) << r.lr << " loss " << std::setprecision(6) << r.loss
          << '\n'
          << std::flush;
    }
  });
  save_checkpoint(a.out, model.to_checkpoint());
  if (!a.curve.empty()) {
    std::ofstream f(a.curve);
    if (!f) throw FormatError("cannot write '" + a.curve + "'");
    f << "step,lr,loss\n" << std::setprecision(17);
    for (const auto& r : result.curve) f << r.step << ',' << r.lr << ',' << r.loss << '\n';
  }
  if (run.task != Task::Depth) {
    const auto iters = model.head_kind == HeadKind::Linear ? 1 : run.train.loss.iters;
    const auto err = per_iteration_error(model, data, iters);
    out << "train error per iteration:";
    for (double e : err) out << ' ' << std::setprecision(5) << e;
    out << '\n';
  }
  out << "wrote " << a.out << " after " << run.train.steps << " steps\n";
  return kOk;
}

struct InferArgs {
  std::string ckpt, img1, img2, out, task, cams, pad = "clamp";
  std::int64_t iters = -1;
  std::int64_t stride = 224;
  bool tiled = false;
};

inline PadMode parse_pad(const std::string& s) {
  if (s == "clamp") return PadMode::Clamp;
  if (s == "zeros") return PadMode::Zeros;
  if (s == "wrap") return PadMode::Wrap;
  throw ParamError("unknown padding mode '" + s + "' (clamp, zeros, wrap)");
}

inline int cmd_infer(const InferArgs& a, std::ostream& out) {
  const auto c = load_checkpoint<float>(a.ckpt);
  if (c.meta_or("kind", "") != "model") throw CheckpointError("'" + a.ckpt + "' is not a trained model checkpoint");
  const auto model = Model<float>::from_checkpoint(c);
  if (!a.task.empty() && parse_task(a.task) != model.task) {
    throw ParamError("--task " + a.task + " does not match the checkpoint task '" + task_name(model.task) + "'");
  }
  const auto iters = a.iters > 0 ? a.iters : (model.task == Task::Depth ? 1 : 6);
  if (model.head_kind == HeadKind::Linear && a.iters > 1) throw ParamError("a linear-head model takes no --iters");
  std::optional<CameraPair> cams;
  if (!a.cams.empty()) cams = read_cameras(a.cams);
  if (model.task == Task::Depth && !cams) throw ParamError("depth inference needs --cams");
  const auto I1 = read_image_png<float>(a.img1), I2 = read_image_png<float>(a.img2);
  if (I1.shape() != I2.shape()) throw FormatError("input images differ in size");
  const auto pad = parse_pad(a.pad);
  GeoField<float> field;
  if (a.tiled) {
    field = tiled_run_inference(model, I1, I2, iters, a.stride, cams, pad);
  } else {
    if (I1.dim(1) != model.vit.image_h || I1.dim(2) != model.vit.image_w) {
      throw FormatError("images are " + std::to_string(I1.dim(1)) + "x" + std::to_string(I1.dim(2)) +
                        " but the model expects " + std::to_string(model.vit.image_h) + "x" +
                        std::to_string(model.vit.image_w) + " (use --tiled)");
    }
    field = run_inference(model, I1, I2, iters, cams, pad);
  }
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  write_field(a.out, field);
  out << "wrote " << a.out << " (" << field_kind_name(field.kind) << ", " << iters << " iterations)\n";
  return kOk;
}

struct EvalArgs {
  std::string pred, gt, out, f1_rule = "and";
  bool per_sample = false;
};

/// Field files under a directory: .flo, .pfm, and 16-bit 3-channel .png.
inline std::vector<fs::path> field_files(const fs::path& root) {
  if (!fs::is_directory(root)) throw FormatError("'" + root.string() + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext == ".flo" || ext == ".pfm") {
      out.push_back(fs::relative(e.path(), root));
    } else if (ext == ".png") {
      const auto r = detail::read_png_raw(e.path().string());
      if (r.bit_depth == 16 && r.channels == 3) out.push_back(fs::relative(e.path(), root));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline FieldKind scalar_kind_for(const fs::path& p) {
  return p.filename().string().find("depth") != std::string::npos ? FieldKind::Depth : FieldKind::Disparity;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  F1Rule rule;
  if (a.f1_rule == "and")
    rule = F1Rule::KittiAnd;
  else if (a.f1_rule == "or")
    rule = F1Rule::PaperOr;
  else
    throw ParamError("--f1-rule must be 'and' or 'or'");
  const auto files = field_files(a.gt);
  if (files.empty()) throw FormatError("no ground-truth field files under '" + a.gt + "'");
  std::vector<std::pair<std::string, std::map<std::string, double>>> samples;
  for (const auto& rel : files) {
    const auto kind = scalar_kind_for(rel);
    const auto gt = read_field<float>((fs::path(a.gt) / rel).string(), kind);
    const auto pred_path = fs::path(a.pred) / rel;
    if (!fs::exists(pred_path)) throw FormatError("missing prediction '" + pred_path.string() + "'");
    const auto pred = read_field<float>(pred_path.string(), kind);
    if (pred.data.shape() != gt.data.shape()) throw FormatError("size mismatch for '" + rel.string() + "'");
    samples.emplace_back(rel.string(), field_metrics(pred, gt, rule));
  }
  const auto report = aggregate_metrics(samples);
  const auto text = report.to_text(a.per_sample);
  out << text;
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    if (!f) throw FormatError("cannot write '" + a.out + "'");
    f << text;
  }
  return kOk;
}

struct VizArgs {
  std::string in, out, kind;
  double max_norm = 0;
};

inline int cmd_viz(const VizArgs& a, std::ostream& out) {
  FieldKind scalar = scalar_kind_for(a.in);
  if (a.kind == "depth") scalar = FieldKind::Depth;
  if (a.kind == "disparity") scalar = FieldKind::Disparity;
  if (!a.kind.empty() && a.kind != "depth" && a.kind != "disparity") throw ParamError("--kind must be disparity or depth");
  const auto f = read_field<float>(a.in, scalar);
  const auto img = f.kind == FieldKind::Flow
                       ? flow_to_color(f, a.max_norm > 0 ? std::optional<double>(a.max_norm) : std::nullopt)
                       : scalar_to_gray(f);
  write_image_png(a.out, img);
  out << "wrote " << a.out << '\n';
  return kOk;
}

struct MakeDataArgs {
  std::string kind = "flow", out;
  std::int64_t count = 20, height = 64, width = 96, patch = 16;
  std::uint64_t seed = 1000;
  double max_disp = 4.0;
  // pretrained fixture
  std::int64_t embed_dim = 64, depth = 2, heads = 2, frames = 8, temporal_patch = 2;
};

inline int cmd_make_data(const MakeDataArgs& a, std::ostream& out) {
  if (a.kind == "pretrained") {
    ViTConfig v;
    v.image_h = a.height;
    v.image_w = a.width;
    v.patch = a.patch;
    v.embed_dim = a.embed_dim;
    v.depth = a.depth;
    v.num_heads = a.heads;
    v.pretrain_frames = a.frames;
    v.temporal_patch = a.temporal_patch;
    save_checkpoint(a.out, make_synthetic_pretrained<float>(v, a.seed).to_checkpoint());
    out << "wrote synthetic pretrained checkpoint " << a.out << '\n';
    return kOk;
  }
  FieldKind kind;
  if (a.kind == "flow")
    kind = FieldKind::Flow;
  else if (a.kind == "disparity")
    kind = FieldKind::Disparity;
  else if (a.kind == "depth")
    kind = FieldKind::Depth;
  else
    throw ParamError("--kind must be flow, disparity, depth or pretrained");
  if (a.count < 1) throw ParamError("--count must be >= 1");
  SyntheticParams p;
  p.max_disp = a.max_disp;
  p.patch = a.patch;
  for (std::int64_t i = 0; i < a.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%04lld", static_cast<long long>(i));
    write_sample(fs::path(a.out) / name,
                 make_synthetic<float>(kind, a.height, a.width, a.seed + static_cast<std::uint64_t>(i), p));
  }
  out << "wrote " << a.count << ' ' << a.kind << " samples to " << a.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"geovit: two-frame ViT geometry estimation (flow, stereo, depth)", "geovit"};
  app.require_subcommand(1);

  AdaptArgs adapt;
  auto* s_adapt = app.add_subcommand("adapt", "Adapt a multi-frame video checkpoint to a two-frame encoder");
  s_adapt->add_option("--in", adapt.in, "Pretrained checkpoint")->required();
  s_adapt->add_option("--out", adapt.out, "Adapted encoder checkpoint")->required();
  s_adapt->add_option("--image-h", adapt.image_h, "Target image height")->required();
  s_adapt->add_option("--image-w", adapt.image_w, "Target image width")->required();

  TrainArgs train;
  std::int64_t train_seed = 0;
  auto* s_train = app.add_subcommand("train-toy", "Train a model on synthetic data from a key=value config");
  s_train->add_option("--config", train.config, "Config file")->required();
  s_train->add_option("--out", train.out, "Output model checkpoint")->required();
  s_train->add_option("--curve", train.curve, "Loss curve CSV");
  s_train->add_option("--data", train.data, "Sample directory (overrides the config)");
  auto* seed_opt = s_train->add_option("--seed", train_seed, "Random seed (overrides the config)");
  s_train->add_flag("--quiet", train.quiet, "No per-step log");

  InferArgs infer;
  auto* s_infer = app.add_subcommand("infer", "Predict a field for an image pair");
  s_infer->add_option("--ckpt", infer.ckpt, "Model checkpoint")->required();
  s_infer->add_option("--img1", infer.img1, "Source image (PNG)")->required();
  s_infer->add_option("--img2", infer.img2, "Target image (PNG)")->required();
  s_infer->add_option("--out", infer.out, "Output field (.flo, .png or .pfm)")->required();
  s_infer->add_option("--task", infer.task, "flow, disparity or depth (checked against the checkpoint)");
  s_infer->add_option("--iters", infer.iters, "Refinement iterations (default 6, depth 1)");
  s_infer->add_option("--cams", infer.cams, "Camera file (depth)");
  s_infer->add_flag("--tiled", infer.tiled, "Sliding-window inference at the model's input size");
  s_infer->add_option("--stride", infer.stride, "Tile stride in pixels")->capture_default_str();
  s_infer->add_option("--pad", infer.pad, "Warp padding: clamp, zeros or wrap")->capture_default_str();

  EvalArgs eval;
  auto* s_eval = app.add_subcommand("eval", "Score predictions against ground truth");
  s_eval->add_option("--pred", eval.pred, "Prediction directory")->required();
  s_eval->add_option("--gt", eval.gt, "Ground-truth directory")->required();
  s_eval->add_option("--f1-rule", eval.f1_rule, "Outlier rule: and (KITTI) or or")->capture_default_str();
  s_eval->add_option("--out", eval.out, "Write the report to a file as well");
  s_eval->add_flag("--per-sample", eval.per_sample, "List metrics per file");

  VizArgs viz;
  auto* s_viz = app.add_subcommand("viz", "Render a field file as PNG");
  s_viz->add_option("--in", viz.in, "Field file")->required();
  s_viz->add_option("--out", viz.out, "PNG output")->required();
  s_viz->add_option("--max-norm", viz.max_norm, "Flow magnitude at full saturation (default: max)");
  s_viz->add_option("--kind", viz.kind, "disparity or depth for .pfm input");

  MakeDataArgs mk;
  auto* s_mk = app.add_subcommand("make-data", "Write synthetic samples or a synthetic pretrained checkpoint");
  s_mk->add_option("--kind", mk.kind, "flow, disparity, depth or pretrained")->capture_default_str();
  s_mk->add_option("--out", mk.out, "Output directory (checkpoint file for pretrained)")->required();
  s_mk->add_option("--count", mk.count, "Number of samples")->capture_default_str();
  s_mk->add_option("--height", mk.height, "Image height")->capture_default_str();
  s_mk->add_option("--width", mk.width, "Image width")->capture_default_str();
  s_mk->add_option("--patch", mk.patch, "Patch size")->capture_default_str();
  s_mk->add_option("--seed", mk.seed, "Seed of the first sample")->capture_default_str();
  s_mk->add_option("--max-disp", mk.max_disp, "Bound on the field magnitude in pixels")->capture_default_str();
  s_mk->add_option("--embed-dim", mk.embed_dim, "Pretrained: embedding width")->capture_default_str();
  s_mk->add_option("--depth", mk.depth, "Pretrained: number of blocks")->capture_default_str();
  s_mk->add_option("--heads", mk.heads, "Pretrained: attention heads")->capture_default_str();
  s_mk->add_option("--frames", mk.frames, "Pretrained: frames")->capture_default_str();
  s_mk->add_option("--temporal-patch", mk.temporal_patch, "Pretrained: frames per 3D patch")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  if (seed_opt->count()) train.seed = train_seed;

  try {
    configure_threads();
    if (*s_adapt) return cmd_adapt(adapt, out);
    if (*s_train) return cmd_train(train, out);
    if (*s_infer) return cmd_infer(infer, out);
    if (*s_eval) return cmd_eval(eval, out);
    if (*s_viz) return cmd_viz(viz, out);
    if (*s_mk) return cmd_make_data(mk, out);
  } catch (const DivergenceError& e) {
    err << "geovit: diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const ParamError& e) {
    err << "geovit: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "geovit: error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace geovit::cli
