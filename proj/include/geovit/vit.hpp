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

// Two-frame spatiotemporal ViT encoder and the surgery that turns a
// multi-frame video checkpoint into it.
//
// A video checkpoint embeds 3-D patches (temporal_patch frames x patch x
// patch) and carries one spatial position table for its pretraining grid plus
// one temporal embedding per temporal slot. For a frame pair we
//   * resize the spatial table to the target grid (bilinear, per channel),
//   * average the first and second half of the temporal slots into one source
//     and one target embedding,
//   * sum the 3-D patch kernel over its temporal axis.
// Tokens of both frames are concatenated and attend jointly in every block;
// only the source-frame outputs are returned.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "geovit/ops.hpp"
#include "geovit/serialize.hpp"

namespace geovit {

struct ViTConfig {
  std::int64_t image_h = 224;
  std::int64_t image_w = 224;
  std::int64_t patch = 16;
  std::int64_t pretrain_frames = 8;
  std::int64_t temporal_patch = 2;
  std::int64_t embed_dim = 1024;
  std::int64_t depth = 24;
  std::int64_t num_heads = 16;
  double mlp_ratio = 4.0;
  double layernorm_eps = 1e-6;

  std::int64_t grid_h() const { return image_h / patch; }
  std::int64_t grid_w() const { return image_w / patch; }
  std::int64_t tokens() const { return grid_h() * grid_w(); }
  std::int64_t temporal_slots() const { return pretrain_frames / temporal_patch; }
  std::int64_t mlp_hidden() const { return static_cast<std::int64_t>(std::llround(embed_dim * mlp_ratio)); }
  std::int64_t head_dim() const { return embed_dim / num_heads; }

  void validate() const {
    if (patch <= 0 || image_h <= 0 || image_w <= 0) throw ShapeError("ViTConfig: sizes must be positive");
    if (image_h % patch || image_w % patch) {
      throw ShapeError("ViTConfig: image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                       " not divisible by patch " + std::to_string(patch));
    }
    if (temporal_patch <= 0 || pretrain_frames % temporal_patch || temporal_slots() % 2) {
      throw ShapeError("ViTConfig: pretrain_frames / temporal_patch must be an even integer");
    }
    if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads) {
      throw ShapeError("ViTConfig: embed_dim must be divisible by num_heads");
    }
    if (depth < 0 || mlp_ratio <= 0 || layernorm_eps <= 0) throw ParamError("ViTConfig: invalid scalar");
  }

  void to_meta(std::map<std::string, std::string>& m) const {
    m["vit.image_h"] = std::to_string(image_h);
    m["vit.image_w"] = std::to_string(image_w);
    m["vit.patch"] = std::to_string(patch);
    m["vit.pretrain_frames"] = std::to_string(pretrain_frames);
    m["vit.temporal_patch"] = std::to_string(temporal_patch);
    m["vit.embed_dim"] = std::to_string(embed_dim);
    m["vit.depth"] = std::to_string(depth);
    m["vit.num_heads"] = std::to_string(num_heads);
    std::ostringstream r, e;
    r.precision(17);
    e.precision(17);
    r << mlp_ratio;
    e << layernorm_eps;
    m["vit.mlp_ratio"] = r.str();
    m["vit.layernorm_eps"] = e.str();
  }

  template <typename T>
  static ViTConfig from_meta(const Checkpoint<T>& c) {
    ViTConfig v;
    v.image_h = static_cast<std::int64_t>(c.meta_number("vit.image_h"));
    v.image_w = static_cast<std::int64_t>(c.meta_number("vit.image_w"));
    v.patch = static_cast<std::int64_t>(c.meta_number("vit.patch"));
    v.pretrain_frames = static_cast<std::int64_t>(c.meta_number("vit.pretrain_frames"));
    v.temporal_patch = static_cast<std::int64_t>(c.meta_number("vit.temporal_patch"));
    v.embed_dim = static_cast<std::int64_t>(c.meta_number("vit.embed_dim"));
    v.depth = static_cast<std::int64_t>(c.meta_number("vit.depth"));
    v.num_heads = static_cast<std::int64_t>(c.meta_number("vit.num_heads"));
    v.mlp_ratio = c.meta_number("vit.mlp_ratio");
    v.layernorm_eps = c.meta_number("vit.layernorm_eps");
    return v;
  }
};

/// Per-channel image normalization carried by checkpoints.
struct Normalization {
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.5, 0.5, 0.5};

  void to_meta(std::map<std::string, std::string>& m) const {
    auto fmt = [](const std::array<double, 3>& a) {
      std::ostringstream os;
      os.precision(17);
      os << a[0] << ',' << a[1] << ',' << a[2];
      return os.str();
    };
    m["norm.mean"] = fmt(mean);
    m["norm.std"] = fmt(std);
  }

  static Normalization from_meta(const std::map<std::string, std::string>& m) {
    Normalization n;
    auto parse = [&](const char* key, std::array<double, 3>& out) {
      auto it = m.find(key);
      if (it == m.end()) return;
      std::stringstream ss(it->second);
      std::string part;
      for (int i = 0; i < 3; ++i) {
        if (!std::getline(ss, part, ',')) throw CheckpointError(std::string("normalization: bad ") + key);
        out[i] = std::stod(part);
      }
    };
    parse("norm.mean", n.mean);
    parse("norm.std", n.std);
    for (double s : n.std)
      if (!(s > 0)) throw CheckpointError("normalization: std must be positive");
    return n;
  }

  /// (x - mean) / std per channel of [N, 3, H, W] or [3, H, W].
  template <typename T>
  Tensor<T> apply(const Tensor<T>& images) const {
    if (images.dim(-3) != 3) throw ShapeError("normalize: expected 3 channels, got " + to_string(images.shape()));
    Tensor<T> m({3, 1, 1}, {T(mean[0]), T(mean[1]), T(mean[2])});
    Tensor<T> s({3, 1, 1}, {T(1 / std[0]), T(1 / std[1]), T(1 / std[2])});
    return mul(sub(images, m), s);
  }
};

template <typename T>
struct BlockWeights {
  Tensor<T> norm1_w, norm1_b;
  Tensor<T> qkv_w, qkv_b;
  Tensor<T> proj_w, proj_b;
  Tensor<T> norm2_w, norm2_b;
  Tensor<T> fc1_w, fc1_b;
  Tensor<T> fc2_w, fc2_b;

  std::vector<std::pair<std::string, Tensor<T>*>> named(const std::string& prefix) {
    return {{prefix + "norm1.weight", &norm1_w}, {prefix + "norm1.bias", &norm1_b},
            {prefix + "attn.qkv.weight", &qkv_w},  {prefix + "attn.qkv.bias", &qkv_b},
            {prefix + "attn.proj.weight", &proj_w}, {prefix + "attn.proj.bias", &proj_b},
            {prefix + "norm2.weight", &norm2_w}, {prefix + "norm2.bias", &norm2_b},
            {prefix + "mlp.fc1.weight", &fc1_w},   {prefix + "mlp.fc1.bias", &fc1_b},
            {prefix + "mlp.fc2.weight", &fc2_w},   {prefix + "mlp.fc2.bias", &fc2_b}};
  }
};

inline std::vector<std::pair<std::string, Shape>> block_param_shapes(const ViTConfig& c) {
  const auto D = c.embed_dim, M = c.mlp_hidden();
  return {{"norm1.weight", {D}},       {"norm1.bias", {D}},       {"attn.qkv.weight", {3 * D, D}},
          {"attn.qkv.bias", {3 * D}},  {"attn.proj.weight", {D, D}}, {"attn.proj.bias", {D}},
          {"norm2.weight", {D}},       {"norm2.bias", {D}},       {"mlp.fc1.weight", {M, D}},
          {"mlp.fc1.bias", {M}},       {"mlp.fc2.weight", {D, M}}, {"mlp.fc2.bias", {D}}};
}

/// Parameters of the adapted two-frame encoder.
template <typename T>
struct ViTWeights {
  Tensor<T> patch_w;        // [D, 3, p, p]
  Tensor<T> patch_b;        // [D]
  Tensor<T> pos_spatial;    // [Hp*Wp, D]
  Tensor<T> pos_temporal_src;  // [D]
  Tensor<T> pos_temporal_tgt;  // [D]
  std::vector<BlockWeights<T>> blocks;
  Tensor<T> norm_w, norm_b;

  std::vector<std::pair<std::string, Tensor<T>*>> named_parameters(const std::string& prefix = "") {
    std::vector<std::pair<std::string, Tensor<T>*>> out{
        {prefix + "patch_embed.proj.weight", &patch_w},
        {prefix + "patch_embed.proj.bias", &patch_b},
        {prefix + "pos_embed_spatial", &pos_spatial},
        {prefix + "pos_embed_temporal_src", &pos_temporal_src},
        {prefix + "pos_embed_temporal_tgt", &pos_temporal_tgt}};
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      for (auto& p : blocks[i].named(prefix + "blocks." + std::to_string(i) + ".")) out.push_back(p);
    }
    out.push_back({prefix + "norm.weight", &norm_w});
    out.push_back({prefix + "norm.bias", &norm_b});
    return out;
  }

  void validate(const ViTConfig& c) const {
    c.validate();
    const auto D = c.embed_dim;
    auto expect = [](const Tensor<T>& t, const Shape& s, const std::string& name) {
      if (!t.defined() || t.shape() != s) {
        throw ShapeError("ViTWeights: " + name + " has shape " + (t.defined() ? to_string(t.shape()) : "undefined") +
                         ", expected " + to_string(s));
      }
    };
    expect(patch_w, {D, 3, c.patch, c.patch}, "patch_embed.proj.weight");
    expect(patch_b, {D}, "patch_embed.proj.bias");
    expect(pos_spatial, {c.tokens(), D}, "pos_embed_spatial");
    expect(pos_temporal_src, {D}, "pos_embed_temporal_src");
    expect(pos_temporal_tgt, {D}, "pos_embed_temporal_tgt");
    if (static_cast<std::int64_t>(blocks.size()) != c.depth) throw ShapeError("ViTWeights: block count mismatch");
    const auto shapes = block_param_shapes(c);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      auto named = const_cast<BlockWeights<T>&>(blocks[i]).named("");
      for (std::size_t k = 0; k < named.size(); ++k) expect(*named[k].second, shapes[k].second, named[k].first);
    }
    expect(norm_w, {D}, "norm.weight");
    expect(norm_b, {D}, "norm.bias");
  }
};

/// Random initialization: truncated normal (std 0.02) for embeddings and
/// projection weights, zero biases, unit layernorm gains.
template <typename T>
ViTWeights<T> random_vit_weights(const ViTConfig& c, std::mt19937_64& rng) {
  c.validate();
  const auto D = c.embed_dim;
  const T s = T(0.02);
  ViTWeights<T> w;
  w.patch_w = Tensor<T>::trunc_normal({D, 3, c.patch, c.patch}, rng, s);
  w.patch_b = Tensor<T>::zeros({D});
  w.pos_spatial = Tensor<T>::trunc_normal({c.tokens(), D}, rng, s);
  w.pos_temporal_src = Tensor<T>::trunc_normal({D}, rng, s);
  w.pos_temporal_tgt = Tensor<T>::trunc_normal({D}, rng, s);
  for (std::int64_t i = 0; i < c.depth; ++i) {
    BlockWeights<T> b;
    for (auto& [name, shape] : block_param_shapes(c)) {
      Tensor<T> t;
      if (name.find("norm") != std::string::npos && name.find("weight") != std::string::npos)
        t = Tensor<T>::ones(shape);
      else if (name.find("bias") != std::string::npos)
        t = Tensor<T>::zeros(shape);
      else
        t = Tensor<T>::trunc_normal(shape, rng, s);
      for (auto& [n2, ptr] : b.named(""))
        if (n2 == name) *ptr = t;
    }
    w.blocks.push_back(std::move(b));
  }
  w.norm_w = Tensor<T>::ones({D});
  w.norm_b = Tensor<T>::zeros({D});
  return w;
}

// ---------------------------------------------------------------------------
// Checkpoint surgery

/// Resize every channel of a row-major [hp*wp, D] position table to [Hp*Wp, D].
template <typename T>
Tensor<T> adapt_spatial_pos(const Tensor<T>& pos, std::pair<std::int64_t, std::int64_t> src_grid,
                            std::pair<std::int64_t, std::int64_t> dst_grid) {
  const auto [hp, wp] = src_grid;
  const auto [Hp, Wp] = dst_grid;
  if (pos.rank() != 2 || pos.dim(0) != hp * wp) {
    throw ShapeError("adapt_spatial_pos: table " + to_string(pos.shape()) + " does not match grid " +
                     std::to_string(hp) + "x" + std::to_string(wp));
  }
  if (Hp <= 0 || Wp <= 0) throw ShapeError("adapt_spatial_pos: target grid must be positive");
  const auto D = pos.dim(1);
  if (hp == Hp && wp == Wp) return pos.detach();
  auto grid = reshape(permute(reshape(pos, {hp, wp, D}), {2, 0, 1}), {1, D, hp, wp});
  auto resized = bilinear_resize(grid, Hp, Wp, false);
  return reshape(permute(reshape(resized, {D, Hp, Wp}), {1, 2, 0}), {Hp * Wp, D}).detach();
}

/// Means of the first and second half of the temporal embedding rows.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> adapt_temporal_pos(const Tensor<T>& pos_t) {
  if (pos_t.rank() != 2) throw ShapeError("adapt_temporal_pos: expected [n_t, D], got " + to_string(pos_t.shape()));
  const auto n = pos_t.dim(0), D = pos_t.dim(1);
  if (n % 2) throw ShapeError("adapt_temporal_pos: odd number of temporal rows " + std::to_string(n));
  const auto half = n / 2;
  auto half_mean = [&](std::int64_t start) {
    std::vector<T> acc(pos_t.vec().begin() + start * D, pos_t.vec().begin() + (start + 1) * D);
    for (std::int64_t r = start + 1; r < start + half; ++r)
      for (std::int64_t d = 0; d < D; ++d) acc[d] += pos_t[r * D + d];
    if (half > 1)
      for (auto& v : acc) v /= static_cast<T>(half);
    return Tensor<T>({D}, std::move(acc));
  };
  return {half_mean(0), half_mean(half)};
}

/// Sum of a [D, 3, t, p, p] kernel over its temporal axis.
template <typename T>
Tensor<T> adapt_patch_embed(const Tensor<T>& kernel) {
  if (kernel.rank() != 5) throw ShapeError("adapt_patch_embed: expected [D, C, t, p, p], got " + to_string(kernel.shape()));
  const auto D = kernel.dim(0), C = kernel.dim(1), t = kernel.dim(2), ph = kernel.dim(3), pw = kernel.dim(4);
  const auto plane = ph * pw;
  std::vector<T> out(static_cast<std::size_t>(D * C * plane));
  for (std::int64_t dc = 0; dc < D * C; ++dc) {
    const T* src = kernel.data().data() + dc * t * plane;
    T* dst = out.data() + dc * plane;
    std::copy_n(src, plane, dst);
    for (std::int64_t k = 1; k < t; ++k)
      for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[k * plane + i];
  }
  return Tensor<T>({D, C, ph, pw}, std::move(out));
}

/// A multi-frame video encoder checkpoint.
template <typename T>
struct PretrainedCheckpoint {
  ViTConfig config;               // architecture scalars; image size = pretraining resolution
  std::int64_t grid_h = 0, grid_w = 0;  // pretraining patch grid (0 = infer as square)
  Normalization normalization;
  std::map<std::string, Tensor<T>> params;

  const Tensor<T>& at(const std::string& path) const {
    auto it = params.find(path);
    if (it == params.end()) throw CheckpointError("adapt_checkpoint: missing parameter '" + path + "'");
    return it->second;
  }

  Checkpoint<T> to_checkpoint() const {
    Checkpoint<T> c;
    config.to_meta(c.meta);
    normalization.to_meta(c.meta);
    c.meta["kind"] = "pretrained";
    c.meta["pretrain.grid_h"] = std::to_string(grid_h);
    c.meta["pretrain.grid_w"] = std::to_string(grid_w);
    c.tensors = params;
    return c;
  }

  static PretrainedCheckpoint from_checkpoint(const Checkpoint<T>& c) {
    if (c.meta_or("kind", "") != "pretrained") throw CheckpointError("checkpoint is not a pretrained video encoder");
    PretrainedCheckpoint p;
    p.config = ViTConfig::from_meta(c);
    p.grid_h = static_cast<std::int64_t>(std::stoll(c.meta_or("pretrain.grid_h", "0")));
    p.grid_w = static_cast<std::int64_t>(std::stoll(c.meta_or("pretrain.grid_w", "0")));
    p.normalization = Normalization::from_meta(c.meta);
    p.params = c.tensors;
    return p;
  }
};

namespace detail {

// Drop leading singleton axes ([1, L, D] tables are common in video checkpoints).
template <typename T>
Tensor<T> squeeze_leading(const Tensor<T>& t, std::int64_t keep_rank) {
  Shape s = t.shape();
  while (static_cast<std::int64_t>(s.size()) > keep_rank && s.front() == 1) s.erase(s.begin());
  return s == t.shape() ? t : reshape(t, s);
}

}  // namespace detail

template <typename T>
ViTWeights<T> adapt_checkpoint(const PretrainedCheckpoint<T>& ckpt, const ViTConfig& target) {
  target.validate();
  NoGradGuard no_grad;
  const auto D = target.embed_dim;

  auto kernel = ckpt.at("patch_embed.proj.weight");
  if (kernel.rank() == 4) kernel = reshape(kernel, {kernel.dim(0), kernel.dim(1), 1, kernel.dim(2), kernel.dim(3)});
  if (kernel.rank() != 5 || kernel.dim(0) != D || kernel.dim(1) != 3 || kernel.dim(3) != target.patch ||
      kernel.dim(4) != target.patch) {
    throw ShapeError("adapt_checkpoint: patch kernel " + to_string(kernel.shape()) + " incompatible with config");
  }
  if (kernel.dim(2) != target.temporal_patch) {
    throw ShapeError("adapt_checkpoint: kernel temporal extent " + std::to_string(kernel.dim(2)) +
                     " != temporal_patch " + std::to_string(target.temporal_patch));
  }

  const auto pos = detail::squeeze_leading(ckpt.at("pos_embed_spatial"), 2);
  if (pos.rank() != 2 || pos.dim(1) != D) throw ShapeError("adapt_checkpoint: spatial table " + to_string(pos.shape()));
  std::int64_t gh = ckpt.grid_h, gw = ckpt.grid_w;
  if (gh <= 0 || gw <= 0) {
    gh = gw = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(pos.dim(0)))));
  }
  if (gh * gw != pos.dim(0)) {
    throw ShapeError("adapt_checkpoint: cannot infer pretraining grid from " + std::to_string(pos.dim(0)) + " rows");
  }

  const auto tpos = detail::squeeze_leading(ckpt.at("pos_embed_temporal"), 2);
  if (tpos.rank() != 2 || tpos.dim(1) != D) {
    throw ShapeError("adapt_checkpoint: temporal table " + to_string(tpos.shape()));
  }

  ViTWeights<T> w;
  w.patch_w = adapt_patch_embed(kernel);
  w.patch_b = ckpt.at("patch_embed.proj.bias").detach();
  w.pos_spatial = adapt_spatial_pos(pos, {gh, gw}, {target.grid_h(), target.grid_w()});
  std::tie(w.pos_temporal_src, w.pos_temporal_tgt) = adapt_temporal_pos(tpos);
  for (std::int64_t i = 0; i < target.depth; ++i) {
    BlockWeights<T> b;
    const auto prefix = "blocks." + std::to_string(i) + ".";
    for (auto& [name, ptr] : b.named(prefix)) *ptr = ckpt.at(name).detach();
    w.blocks.push_back(std::move(b));
  }
  w.norm_w = ckpt.at("norm.weight").detach();
  w.norm_b = ckpt.at("norm.bias").detach();
  w.validate(target);
  return w;
}

/// Synthetic video checkpoint with random tables, for fixtures and tests.
/// `pretrain` describes the pretraining geometry (image size / patch grid).
template <typename T>
PretrainedCheckpoint<T> make_synthetic_pretrained(const ViTConfig& pretrain, std::uint64_t seed) {
  pretrain.validate();
  std::mt19937_64 rng(seed);
  const auto D = pretrain.embed_dim;
  PretrainedCheckpoint<T> p;
  p.config = pretrain;
  p.grid_h = pretrain.grid_h();
  p.grid_w = pretrain.grid_w();
  p.params["patch_embed.proj.weight"] =
      Tensor<T>::trunc_normal({D, 3, pretrain.temporal_patch, pretrain.patch, pretrain.patch}, rng, T(0.02));
  p.params["patch_embed.proj.bias"] = Tensor<T>::trunc_normal({D}, rng, T(0.02));
  p.params["pos_embed_spatial"] = Tensor<T>::trunc_normal({pretrain.tokens(), D}, rng, T(0.02));
  p.params["pos_embed_temporal"] = Tensor<T>::trunc_normal({pretrain.temporal_slots(), D}, rng, T(0.02));
  auto blocks = random_vit_weights<T>(pretrain, rng).blocks;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    for (auto& [name, ptr] : blocks[i].named("blocks." + std::to_string(i) + ".")) p.params[name] = *ptr;
  p.params["norm.weight"] = Tensor<T>::ones({D});
  p.params["norm.bias"] = Tensor<T>::zeros({D});
  return p;
}

// ---------------------------------------------------------------------------
// Forward pass

/// [N, 3, H, W] -> [N, Hp*Wp, 3*p*p], rows ordered row-major over the patch grid.
template <typename T>
Tensor<T> patchify(const Tensor<T>& images, std::int64_t patch) {
  const auto N = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  const auto gh = H / patch, gw = W / patch;
  auto x = reshape(images, {N, C, gh, patch, gw, patch});
  x = permute(x, {0, 2, 4, 1, 3, 5});
  return reshape(x, {N, gh * gw, C * patch * patch});
}

template <typename T>
Tensor<T> attention_block(const Tensor<T>& x, const BlockWeights<T>& b, const ViTConfig& c) {
  const auto N = x.dim(0), S = x.dim(1), D = c.embed_dim, H = c.num_heads, hd = c.head_dim();
  const T eps = static_cast<T>(c.layernorm_eps);
  auto h = layernorm(x, -1, eps, b.norm1_w, b.norm1_b);
  auto qkv = linear(h, b.qkv_w, b.qkv_b);                       // [N, S, 3D]
  qkv = permute(reshape(qkv, {N, S, 3, H, hd}), {2, 0, 3, 1, 4});  // [3, N, H, S, hd]
  auto parts = split(qkv, {1, 1, 1}, 0);
  auto q = reshape(parts[0], {N, H, S, hd});
  auto k = reshape(parts[1], {N, H, S, hd});
  auto v = reshape(parts[2], {N, H, S, hd});
  auto att = scale(matmul(q, transpose(k, -1, -2)), static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))));
  att = softmax(att, -1);
  auto ctx = reshape(permute(matmul(att, v), {0, 2, 1, 3}), {N, S, D});
  auto y = add(x, linear(ctx, b.proj_w, b.proj_b));
  auto m = layernorm(y, -1, eps, b.norm2_w, b.norm2_b);
  m = linear(gelu(linear(m, b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b);
  return add(y, m);
}

/// Token embedding of one frame: patch projection + spatial + temporal position.
template <typename T>
Tensor<T> embed_frame(const Tensor<T>& image, const ViTWeights<T>& w, const ViTConfig& c, const Tensor<T>& temporal) {
  const auto D = c.embed_dim;
  auto tokens = linear(patchify(image, c.patch), reshape(w.patch_w, {D, 3 * c.patch * c.patch}), w.patch_b);
  return add(add(tokens, w.pos_spatial), temporal);
}

/// Source-frame features [N, Hp*Wp, D] for normalized pairs [N, 3, H, W]
/// (a single [3, H, W] pair yields [Hp*Wp, D]).
template <typename T>
Tensor<T> encode_pair(const Tensor<T>& source, const Tensor<T>& target, const ViTWeights<T>& w, const ViTConfig& c) {
  if (source.rank() == 3 && target.rank() == 3) {
    auto s = reshape(source, {1, source.dim(0), source.dim(1), source.dim(2)});
    auto t = reshape(target, {1, target.dim(0), target.dim(1), target.dim(2)});
    auto f = encode_pair(s, t, w, c);
    return reshape(f, {f.dim(1), f.dim(2)});
  }
  const Shape expected{source.rank() == 4 ? source.dim(0) : 0, 3, c.image_h, c.image_w};
  if (source.rank() != 4 || source.shape() != expected || target.shape() != expected) {
    throw ShapeError("encode_pair: images " + to_string(source.shape()) + " / " + to_string(target.shape()) +
                     " do not match config " + std::to_string(c.image_h) + "x" + std::to_string(c.image_w));
  }
  const auto L = c.tokens();
  auto x = concat<T>({embed_frame(source, w, c, w.pos_temporal_src), embed_frame(target, w, c, w.pos_temporal_tgt)}, 1);
  for (const auto& b : w.blocks) x = attention_block(x, b, c);
  x = layernorm(x, -1, static_cast<T>(c.layernorm_eps), w.norm_w, w.norm_b);
  return slice(x, 1, 0, L);
}

}  // namespace geovit
