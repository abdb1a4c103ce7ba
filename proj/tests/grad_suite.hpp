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

// Per-op finite-difference gradient suite shared by the unit and acceptance
// tests. Every case reduces the op output to a scalar through a fixed random
// weighting so that each output element contributes a distinct gradient.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "geovit/gradcheck.hpp"
#include "geovit/ops.hpp"

namespace geovit::oracle {

struct GradProbe {
  std::function<TensorD(const TensorD&)> f;
  TensorD x;
};

struct OpGradSpec {
  std::string name;
  double rtol = 1e-5;
  std::function<std::vector<GradProbe>(std::mt19937_64&)> make;
};

struct OpGradResult {
  std::string name;
  int cases = 0;
  int probes = 0;
  int failures = 0;
  double worst = 0.0;
};

inline int rand_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline TensorD rand_t(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return TensorD::uniform(s, rng, lo, hi);
}

/// Uniform magnitude in [lo, hi] with a random sign: keeps samples off kinks at 0.
inline TensorD rand_signed_away(const Shape& s, std::mt19937_64& rng, double lo, double hi) {
  auto t = TensorD::uniform(s, rng, lo, hi);
  std::bernoulli_distribution coin(0.5);
  for (auto& v : t.mutable_data())
    if (coin(rng)) v = -v;
  return t;
}

/// Random coordinates whose fractional parts stay at least `margin` from the grid.
inline TensorD rand_offgrid(const Shape& s, std::mt19937_64& rng, double lo, double hi, double margin = 1e-3) {
  auto t = TensorD::uniform(s, rng, lo, hi);
  std::uniform_real_distribution<double> frac(margin, 1.0 - margin);
  for (auto& v : t.mutable_data()) v = std::floor(v) + frac(rng);
  return t;
}

inline TensorD weighted_sum(const TensorD& y, const TensorD& w) { return sum(mul(y, w)); }

inline std::vector<OpGradSpec> op_grad_specs() {
  std::vector<OpGradSpec> specs;
  auto unary = [&](std::string name, std::function<TensorD(const TensorD&)> op,
                   std::function<TensorD(const Shape&, std::mt19937_64&)> gen) {
    specs.push_back({name, 1e-5, [op, gen](std::mt19937_64& rng) {
                       Shape s{rand_int(rng, 1, 3), rand_int(rng, 1, 5)};
                       auto w = rand_t(s, rng);
                       return std::vector<GradProbe>{{[op, w](const TensorD& x) { return weighted_sum(op(x), w); },
                                                      gen(s, rng)}};
                     }});
  };
  auto plain = [](const Shape& s, std::mt19937_64& rng) { return rand_t(s, rng, -2.0, 2.0); };
  auto away = [](const Shape& s, std::mt19937_64& rng) { return rand_signed_away(s, rng, 0.05, 2.0); };
  auto positive = [](const Shape& s, std::mt19937_64& rng) { return rand_t(s, rng, 0.2, 3.0); };

  auto binary = [&](std::string name, std::function<TensorD(const TensorD&, const TensorD&)> op, bool positive_b) {
    specs.push_back({name, 1e-5, [op, positive_b](std::mt19937_64& rng) {
                       const int n = rand_int(rng, 1, 3), c = rand_int(rng, 1, 3), d = rand_int(rng, 1, 4);
                       Shape sa{n, c, d};
                       // equal, row-vector and per-channel operands
                       const int mode = rand_int(rng, 0, 3);
                       Shape sb = mode == 0 ? sa : mode == 1 ? Shape{d} : mode == 2 ? Shape{c, 1} : Shape{1};
                       auto a = rand_t(sa, rng, -2.0, 2.0);
                       auto b = positive_b ? rand_signed_away(sb, rng, 0.5, 2.0) : rand_t(sb, rng, -2.0, 2.0);
                       auto w = rand_t(sa, rng);
                       return std::vector<GradProbe>{
                           {[op, b, w](const TensorD& x) { return weighted_sum(op(x, b), w); }, a},
                           {[op, a, w](const TensorD& x) { return weighted_sum(op(a, x), w); }, b}};
                     }});
  };

  binary("add", [](const TensorD& a, const TensorD& b) { return add(a, b); }, false);
  binary("sub", [](const TensorD& a, const TensorD& b) { return sub(a, b); }, false);
  binary("mul", [](const TensorD& a, const TensorD& b) { return mul(a, b); }, false);
  binary("div", [](const TensorD& a, const TensorD& b) { return div(a, b); }, true);

  unary("exp", [](const TensorD& x) { return exp(x); }, plain);
  unary("log", [](const TensorD& x) { return log(x); }, positive);
  unary("sqrt", [](const TensorD& x) { return sqrt(x); }, positive);
  unary("abs", [](const TensorD& x) { return abs(x); }, away);
  unary("relu", [](const TensorD& x) { return relu(x); }, away);
  unary("sigmoid", [](const TensorD& x) { return sigmoid(x); }, plain);
  unary("tanh", [](const TensorD& x) { return tanh(x); }, plain);
  unary("gelu", [](const TensorD& x) { return gelu(x); }, plain);

  specs.push_back({"matmul", 1e-5, [](std::mt19937_64& rng) {
                     const int b = rand_int(rng, 1, 3), m = rand_int(rng, 1, 4), k = rand_int(rng, 1, 4),
                               n = rand_int(rng, 1, 4);
                     const bool shared = rand_int(rng, 0, 1) == 1;
                     auto A = rand_t({b, m, k}, rng);
                     auto B = shared ? rand_t({k, n}, rng) : rand_t({b, k, n}, rng);
                     auto w = rand_t({b, m, n}, rng);
                     return std::vector<GradProbe>{
                         {[B, w](const TensorD& x) { return weighted_sum(matmul(x, B), w); }, A},
                         {[A, w](const TensorD& x) { return weighted_sum(matmul(A, x), w); }, B}};
                   }});

  specs.push_back({"linear", 1e-5, [](std::mt19937_64& rng) {
                     const int r = rand_int(rng, 1, 4), in = rand_int(rng, 1, 5), out = rand_int(rng, 1, 4);
                     auto X = rand_t({2, r, in}, rng);
                     auto W = rand_t({out, in}, rng);
                     auto B = rand_t({out}, rng);
                     auto w = rand_t({2, r, out}, rng);
                     return std::vector<GradProbe>{
                         {[W, B, w](const TensorD& x) { return weighted_sum(linear(x, W, B), w); }, X},
                         {[X, B, w](const TensorD& x) { return weighted_sum(linear(X, x, B), w); }, W},
                         {[X, W, w](const TensorD& x) { return weighted_sum(linear(X, W, x), w); }, B}};
                   }});

  specs.push_back({"conv2d", 1e-5, [](std::mt19937_64& rng) {
                     const int N = rand_int(rng, 1, 2), C = rand_int(rng, 1, 3), O = rand_int(rng, 1, 3);
                     const int KH = rand_int(rng, 1, 3), KW = rand_int(rng, 1, 3);
                     const int H = rand_int(rng, KH, 6), W = rand_int(rng, KW, 6);
                     Conv2dParams p{rand_int(rng, 1, 2), rand_int(rng, 1, 2), rand_int(rng, 0, 1), rand_int(rng, 0, 1)};
                     auto X = rand_t({N, C, H, W}, rng);
                     auto K = rand_t({O, C, KH, KW}, rng);
                     auto B = rand_t({O}, rng);
                     auto y = conv2d(X, K, B, p);
                     auto w = rand_t(y.shape(), rng);
                     return std::vector<GradProbe>{
                         {[K, B, w, p](const TensorD& x) { return weighted_sum(conv2d(x, K, B, p), w); }, X},
                         {[X, B, w, p](const TensorD& x) { return weighted_sum(conv2d(X, x, B, p), w); }, K},
                         {[X, K, w, p](const TensorD& x) { return weighted_sum(conv2d(X, K, x, p), w); }, B}};
                   }});

  specs.push_back({"permute", 1e-5, [](std::mt19937_64& rng) {
                     Shape s{rand_int(rng, 1, 3), rand_int(rng, 1, 3), rand_int(rng, 1, 4)};
                     std::vector<std::int64_t> perm{0, 1, 2};
                     std::shuffle(perm.begin(), perm.end(), rng);
                     auto x = rand_t(s, rng);
                     auto w = rand_t(permute(x, perm).shape(), rng);
                     return std::vector<GradProbe>{
                         {[perm, w](const TensorD& t) { return weighted_sum(permute(t, perm), w); }, x}};
                   }});

  specs.push_back({"reshape", 1e-5, [](std::mt19937_64& rng) {
                     const int a = rand_int(rng, 1, 4), b = rand_int(rng, 1, 4);
                     auto x = rand_t({a, b}, rng);
                     auto w = rand_t({b, a}, rng);
                     return std::vector<GradProbe>{
                         {[a, b, w](const TensorD& t) { return weighted_sum(reshape(t, {b, a}), w); }, x}};
                   }});

  specs.push_back({"concat", 1e-5, [](std::mt19937_64& rng) {
                     const int axis = rand_int(rng, 0, 1);
                     Shape s1{2, 3}, s2{2, 3};
                     s1[axis] = rand_int(rng, 1, 3);
                     s2[axis] = rand_int(rng, 1, 3);
                     auto a = rand_t(s1, rng), b = rand_t(s2, rng);
                     auto w = rand_t(concat<double>({a, b}, axis).shape(), rng);
                     return std::vector<GradProbe>{
                         {[b, w, axis](const TensorD& t) { return weighted_sum(concat<double>({t, b}, axis), w); }, a},
                         {[a, w, axis](const TensorD& t) { return weighted_sum(concat<double>({a, t}, axis), w); }, b}};
                   }});

  specs.push_back({"slice", 1e-5, [](std::mt19937_64& rng) {
                     const int n = rand_int(rng, 2, 6);
                     const int start = rand_int(rng, 0, n - 1), end = rand_int(rng, start + 1, n);
                     auto x = rand_t({2, n, 2}, rng);
                     auto w = rand_t({2, end - start, 2}, rng);
                     return std::vector<GradProbe>{
                         {[start, end, w](const TensorD& t) { return weighted_sum(slice(t, 1, start, end), w); }, x}};
                   }});

  specs.push_back({"split", 1e-5, [](std::mt19937_64& rng) {
                     const int a = rand_int(rng, 1, 3), b = rand_int(rng, 1, 3);
                     auto x = rand_t({a + b, 2}, rng);
                     auto w0 = rand_t({a, 2}, rng), w1 = rand_t({b, 2}, rng);
                     return std::vector<GradProbe>{{[a, b, w0, w1](const TensorD& t) {
                                                      auto parts = split(t, {a, b}, 0);
                                                      return add(weighted_sum(parts[0], w0), weighted_sum(parts[1], w1));
                                                    },
                                                    x}};
                   }});

  specs.push_back({"softmax", 1e-5, [](std::mt19937_64& rng) {
                     Shape s{rand_int(rng, 1, 3), rand_int(rng, 2, 5), rand_int(rng, 1, 3)};
                     const int axis = rand_int(rng, 0, 2);
                     auto x = rand_t(s, rng, -3.0, 3.0);
                     auto w = rand_t(s, rng);
                     return std::vector<GradProbe>{
                         {[axis, w](const TensorD& t) { return weighted_sum(softmax(t, axis), w); }, x}};
                   }});

  specs.push_back({"layernorm", 1e-5, [](std::mt19937_64& rng) {
                     Shape s{rand_int(rng, 1, 3), rand_int(rng, 2, 6), rand_int(rng, 1, 2)};
                     const int axis = rand_int(rng, 1, 2) == 1 ? 1 : (s[2] > 1 ? 2 : 1);
                     auto x = rand_t(s, rng, -2.0, 2.0);
                     auto g = rand_t({s[axis]}, rng, 0.5, 1.5), b = rand_t({s[axis]}, rng);
                     auto w = rand_t(s, rng);
                     return std::vector<GradProbe>{
                         {[axis, g, b, w](const TensorD& t) { return weighted_sum(layernorm(t, axis, 1e-5, g, b), w); }, x},
                         {[axis, x, b, w](const TensorD& t) { return weighted_sum(layernorm(x, axis, 1e-5, t, b), w); }, g},
                         {[axis, x, g, w](const TensorD& t) { return weighted_sum(layernorm(x, axis, 1e-5, g, t), w); }, b}};
                   }});

  specs.push_back({"sum_axis", 1e-5, [](std::mt19937_64& rng) {
                     Shape s{rand_int(rng, 1, 3), rand_int(rng, 1, 4), rand_int(rng, 1, 3)};
                     const int axis = rand_int(rng, 0, 2);
                     auto x = rand_t(s, rng);
                     auto w = rand_t(sum(x, axis).shape(), rng);
                     return std::vector<GradProbe>{{[axis, w](const TensorD& t) { return weighted_sum(sum(t, axis), w); }, x}};
                   }});

  specs.push_back({"mean_axis", 1e-5, [](std::mt19937_64& rng) {
                     Shape s{rand_int(rng, 1, 3), rand_int(rng, 1, 4)};
                     const int axis = rand_int(rng, 0, 1);
                     auto x = rand_t(s, rng);
                     auto w = rand_t(mean(x, axis, true).shape(), rng);
                     return std::vector<GradProbe>{
                         {[axis, w](const TensorD& t) { return weighted_sum(mean(t, axis, true), w); }, x}};
                   }});

  specs.push_back({"bilinear_resize", 1e-5, [](std::mt19937_64& rng) {
                     const int H = rand_int(rng, 1, 5), W = rand_int(rng, 1, 5);
                     const int oh = rand_int(rng, 1, 8), ow = rand_int(rng, 1, 8);
                     const bool ac = rand_int(rng, 0, 1) == 1;
                     auto x = rand_t({1, 2, H, W}, rng);
                     auto w = rand_t({1, 2, oh, ow}, rng);
                     return std::vector<GradProbe>{
                         {[oh, ow, ac, w](const TensorD& t) { return weighted_sum(bilinear_resize(t, oh, ow, ac), w); }, x}};
                   }});

  specs.push_back({"grid_sample", 1e-4, [](std::mt19937_64& rng) {
                     const int H = rand_int(rng, 2, 5), W = rand_int(rng, 2, 5), Ho = rand_int(rng, 1, 4),
                               Wo = rand_int(rng, 1, 4);
                     const PadMode mode = static_cast<PadMode>(rand_int(rng, 0, 2));
                     auto img = rand_t({1, 2, H, W}, rng);
                     auto c = rand_offgrid({1, 2, Ho, Wo}, rng, -1.5, std::max(H, W) + 0.5);
                     auto w = rand_t({1, 2, Ho, Wo}, rng);
                     return std::vector<GradProbe>{
                         {[c, w, mode](const TensorD& t) { return weighted_sum(grid_sample(t, c, mode), w); }, img},
                         {[img, w, mode](const TensorD& t) { return weighted_sum(grid_sample(img, t, mode), w); }, c}};
                   }});

  specs.push_back({"embedding_lookup", 1e-5, [](std::mt19937_64& rng) {
                     const int V = rand_int(rng, 1, 5), D = rand_int(rng, 1, 4), n = rand_int(rng, 1, 6);
                     std::vector<std::int64_t> idx(n);
                     for (auto& i : idx) i = rand_int(rng, 0, V - 1);
                     auto table = rand_t({V, D}, rng);
                     auto w = rand_t({n, D}, rng);
                     return std::vector<GradProbe>{
                         {[idx, w](const TensorD& t) { return weighted_sum(embedding_lookup<double>(t, idx), w); }, table}};
                   }});

  specs.push_back({"pad2d", 1e-5, [](std::mt19937_64& rng) {
                     const int H = rand_int(rng, 1, 4), W = rand_int(rng, 1, 4);
                     const int t = rand_int(rng, 0, 2), b = rand_int(rng, 0, 2), l = rand_int(rng, 0, 2),
                               r = rand_int(rng, 0, 2);
                     const PadMode mode = static_cast<PadMode>(rand_int(rng, 0, 2));
                     auto x = rand_t({2, H, W}, rng);
                     auto w = rand_t({2, H + t + b, W + l + r}, rng);
                     return std::vector<GradProbe>{
                         {[t, b, l, r, mode, w](const TensorD& v) { return weighted_sum(pad2d(v, t, b, l, r, mode), w); }, x}};
                   }});

  return specs;
}

inline OpGradResult run_op_grad_spec(const OpGradSpec& spec, int cases, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  OpGradResult r;
  r.name = spec.name;
  for (int c = 0; c < cases; ++c) {
    for (const auto& probe : spec.make(rng)) {
      const auto rep = finite_diff_check(probe.f, probe.x, 1e-5, spec.rtol);
      ++r.probes;
      r.worst = std::max(r.worst, rep.max_error);
      if (!rep.passed) ++r.failures;
    }
    ++r.cases;
  }
  return r;
}

}  // namespace geovit::oracle
