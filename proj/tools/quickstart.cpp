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

// Library walkthrough: build a small flow model, fit it briefly on synthetic
// pairs, then run the refinement loop on one pair and report the error per step.
//
//   quickstart [steps]

#include <cstdio>
#include <cstdlib>
#include <random>
#include <vector>

#include "geovit/geovit.hpp"

int main(int argc, char** argv) {
  using namespace geovit;
  const std::int64_t steps = argc > 1 ? std::atoll(argv[1]) : 40;
  configure_threads();

  ViTConfig vit;
  vit.image_h = 64;
  vit.image_w = 96;
  vit.embed_dim = 64;
  vit.depth = 2;
  vit.num_heads = 2;

  // Surgery on a (synthetic) 8-frame video checkpoint gives the two-frame encoder.
  ViTConfig pre = vit;
  pre.image_h = pre.image_w = 128;
  auto encoder = adapt_checkpoint(make_synthetic_pretrained<float>(pre, 7), vit);

  std::mt19937_64 rng(0);
  auto model = make_model<float>(vit, DecoderConfig{}, Task::Flow, rng, encoder);

  std::vector<SyntheticSample<float>> data;
  for (int i = 0; i < 8; ++i) data.push_back(make_synthetic<float>(FieldKind::Flow, 64, 96, 1000 + i));

  TrainConfig cfg;
  cfg.steps = steps;
  cfg.loss.iters = 4;
  auto result = train_toy(model, data, cfg);
  std::printf("trained %lld steps in %.1fs, loss %.4f -> %.4f\n", static_cast<long long>(steps), result.seconds,
              result.curve.front().loss, result.curve.back().loss);

  const auto& s = data.front();
  for (std::int64_t iters : {1, 2, 4, 6}) {
    auto flow = run_inference(model, s.I1, s.I2, iters);
    std::printf("T=%lld  EPE %.4f  Fl-all %.2f%%\n", static_cast<long long>(iters), epe(flow, s.gt),
                f1_all(flow, s.gt));
  }
  return 0;
}
