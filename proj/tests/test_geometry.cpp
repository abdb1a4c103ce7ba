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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "geovit/geometry.hpp"
#include "geovit/gradcheck.hpp"
#include "grad_suite.hpp"
#include "test_cameras.hpp"

using namespace geovit;

TEST(Warp, ZeroFieldIsBitExactIdentity) {
  std::mt19937_64 rng(1);
  auto img = TensorF::randn({3, 7, 9}, rng);
  auto out = warp(img, TensorF::zeros({2, 7, 9}));
  EXPECT_EQ(std::memcmp(out.data().data(), img.data().data(), sizeof(float) * img.numel()), 0);
  auto out_z = warp(img, TensorF::zeros({2, 7, 9}), PadMode::Zeros);
  EXPECT_EQ(out_z.vec(), img.vec());
}

TEST(Warp, IntegerShiftAndHalfPixel) {
  auto shifted = warp(TensorF({1, 1, 4}, {0, 1, 2, 3}), TensorF({2, 1, 4}, {1, 1, 1, 1, 0, 0, 0, 0}));
  EXPECT_EQ(shifted.vec(), (std::vector<float>{1, 2, 3, 3}));
  auto half = warp(TensorF({1, 1, 2}, {0, 2}), TensorF({2, 1, 2}, {0.5f, 0.5f, 0, 0}));
  EXPECT_EQ(half.vec(), (std::vector<float>{1, 2}));
  auto zeros = warp(TensorF({1, 1, 4}, {0, 1, 2, 3}), TensorF({2, 1, 4}, {1, 1, 1, 1, 0, 0, 0, 0}), PadMode::Zeros);
  EXPECT_EQ(zeros.vec(), (std::vector<float>{1, 2, 3, 0}));
}

TEST(Warp, DisparityUsesNegativeHorizontalShift) {
  GeoField<float> d(FieldKind::Disparity, TensorF({1, 1, 4}, {1, 1, 1, 1}));
  auto out = warp(TensorF({1, 1, 4}, {0, 1, 2, 3}), d);
  EXPECT_EQ(out.vec(), (std::vector<float>{0, 0, 1, 2}));
}

TEST(Warp, RejectsSizeMismatch) {
  EXPECT_THROW(warp(TensorF::zeros({3, 4, 4}), TensorF::zeros({2, 4, 5})), ShapeError);
}

TEST(Warp, ComposesWithIntegerShiftOnInterior) {
  std::mt19937_64 rng(2);
  const std::int64_t H = 12, W = 14;
  auto img = TensorD::randn({2, H, W}, rng);
  auto f1 = oracle::rand_offgrid({2, H, W}, rng, 0.0, 1.5);
  std::vector<double> c(2 * H * W);
  std::fill(c.begin(), c.begin() + H * W, 2.0);
  std::fill(c.begin() + H * W, c.end(), -1.0);
  TensorD f2({2, H, W}, c);
  auto direct = warp(img, add(f1, f2));
  auto nested = warp(warp(img, f2), f1);
  // Pixels whose every sampling tap stays inside the valid region.
  for (std::int64_t y = 3; y < H - 3; ++y)
    for (std::int64_t x = 2; x < W - 5; ++x)
      for (std::int64_t ch = 0; ch < 2; ++ch) {
        const auto i = (ch * H + y) * W + x;
        EXPECT_NEAR(direct[i], nested[i], 1e-12);
      }
}

TEST(Warp, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    auto img = TensorD::randn({2, 5, 6}, rng);
    auto flow = oracle::rand_offgrid({2, 5, 6}, rng, -2.0, 2.0);
    auto probe = TensorD::randn({2, 5, 6}, rng);
    auto r_img = finite_diff_check([&](const TensorD& x) { return sum(mul(warp(x, flow), probe)); }, img, 1e-5, 1e-4);
    auto r_flow = finite_diff_check([&](const TensorD& f) { return sum(mul(warp(img, f), probe)); }, flow, 1e-5, 1e-4);
    EXPECT_TRUE(r_img.passed) << r_img.max_error;
    EXPECT_TRUE(r_flow.passed) << r_flow.max_error;
  }
}

TEST(DisparityEmbed, Examples) {
  auto z = disparity_embed(TensorF::zeros({1, 2, 2}));
  for (float v : z.vec()) EXPECT_EQ(v, 0.0f);
  auto e = disparity_embed(TensorF({1, 1, 2}, {0, 3}));
  EXPECT_EQ(e.vec(), (std::vector<float>{-0.0f, -3, 0, 0}));
  std::mt19937_64 rng(4);
  auto d = TensorF::uniform({1, 3, 3}, rng, 0, 10);
  auto back = neg(slice(disparity_embed(d), 0, 0, 1));
  EXPECT_EQ(back.vec(), d.vec());
}

TEST(DepthToDisplacement, IdenticalCamerasGiveZeroFlow) {
  CameraPair c;
  c.K_src = c.K_tgt = CameraPair::intrinsics(80, 90, 4, 3);
  std::mt19937_64 rng(5);
  GeoField<double> depth(FieldKind::Depth, TensorD::uniform({1, 6, 8}, rng, 1, 30));
  auto f = depth_to_displacement(depth, c);
  for (double v : f.data.vec()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(DepthToDisplacement, RectifiedPinholeAlgebra) {
  auto cams = CameraPair::rectified(100, 100, 2, 2, 0.1);
  GeoField<double> d10(FieldKind::Depth, TensorD::full({1, 4, 4}, 10.0));
  GeoField<double> d20(FieldKind::Depth, TensorD::full({1, 4, 4}, 20.0));
  auto f10 = depth_to_displacement(d10, cams), f20 = depth_to_displacement(d20, cams);
  for (std::int64_t i = 0; i < 16; ++i) {
    EXPECT_NEAR(f10.data[i], -1.0, 1e-12);
    EXPECT_NEAR(f20.data[i], -0.5, 1e-12);
    EXPECT_NEAR(f10.data[16 + i], 0.0, 1e-9);
  }
}

TEST(DisplacementToDepth, RectifiedClosedForm) {
  auto cams = CameraPair::rectified(100, 100, 2, 2, 0.1);
  std::vector<double> v(32, 0.0);
  for (int i = 0; i < 16; ++i) v[i] = -1.0 - 0.25 * i;
  auto d = displacement_to_depth(GeoField<double>(FieldKind::Flow, TensorD({2, 4, 4}, v)), cams);
  for (int i = 0; i < 16; ++i) EXPECT_NEAR(d.data[i], 100 * 0.1 / (1.0 + 0.25 * i), 1e-12);
  EXPECT_NEAR(d.data[0], 10.0, 1e-12);
}

TEST(DisplacementToDepth, ZeroBaselineIsDegenerate) {
  CameraPair c;
  EXPECT_THROW(displacement_to_depth(GeoField<double>(FieldKind::Flow, TensorD::zeros({2, 2, 2})), c),
               DegenerateGeometryError);
}

TEST(DisplacementToDepth, RoundTripOverRandomCameras) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    auto cams = oracle::random_camera_pair(rng, 12, 16);
    GeoField<double> depth(FieldKind::Depth, TensorD::uniform({1, 12, 16}, rng, 2.0, 40.0));
    auto back = displacement_to_depth(depth_to_displacement(depth, cams), cams);
    for (std::int64_t i = 0; i < depth.pixels(); ++i) {
      if (!back.is_valid(i)) continue;
      EXPECT_LT(std::abs(back.data[i] - depth.data[i]) / depth.data[i], 1e-6);
    }
  }
}

TEST(DisplacementToDepth, NoisyFlowMatchesEpipolarScan) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 0.05);
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto cams = oracle::random_camera_pair(rng, 8, 8);
    GeoField<double> depth(FieldKind::Depth, TensorD::uniform({1, 8, 8}, rng, 2.0, 10.0));
    auto flow = depth_to_displacement(depth, cams);
    auto noisy = flow.data.vec();
    for (auto& v : noisy) v += noise(rng);
    GeoField<double> nf(FieldKind::Flow, TensorD({2, 8, 8}, noisy), flow.valid);
    auto est = displacement_to_depth(nf, cams);
    for (std::int64_t y = 0; y < 8; ++y)
      for (std::int64_t x = 0; x < 8; ++x) {
        const auto i = y * 8 + x;
        if (!est.is_valid(i)) continue;
        const double scan = oracle::epipolar_scan_depth(cams, x, y, x + noisy[i], y + noisy[64 + i]);
        EXPECT_NEAR(est.data[i], scan, 1e-3 * scan) << "pixel " << x << "," << y;
        ++checked;
      }
  }
  EXPECT_GT(checked, 500);
}

TEST(InverseDepthFromFlow, AgreesWithDepthOnExactFlow) {
  std::mt19937_64 rng(8);
  auto cams = oracle::random_camera_pair(rng, 6, 7);
  GeoField<double> depth(FieldKind::Depth, TensorD::uniform({1, 6, 7}, rng, 2.0, 20.0));
  auto flow = depth_to_displacement(depth, cams);
  auto inv = inverse_depth_from_flow(reshape(flow.data, {1, 2, 6, 7}), cams, 0.0);
  for (std::int64_t i = 0; i < 42; ++i)
    if (flow.is_valid(i)) EXPECT_NEAR(inv[i], 1.0 / depth.data[i], 1e-9);

  auto probe = TensorD::randn({1, 1, 6, 7}, rng);
  auto r = finite_diff_check([&](const TensorD& f) { return sum(mul(inverse_depth_from_flow(f, cams), probe)); },
                             reshape(flow.data, {1, 2, 6, 7}));
  EXPECT_TRUE(r.passed) << r.max_error;
}

TEST(CameraPairTest, ValidatesRotation) {
  CameraPair c;
  c.R(0, 1) = 0.1;
  EXPECT_THROW(c.validate(), ParamError);
  CameraPair ok = CameraPair::rectified(10, 10, 0, 0, 1);
  EXPECT_NO_THROW(ok.validate());
}

TEST(GeoFieldTest, EnforcesKindInvariants) {
  EXPECT_THROW(GeoField<float>(FieldKind::Flow, TensorF::zeros({1, 2, 2})), ShapeError);
  EXPECT_THROW(GeoField<float>(FieldKind::Disparity, TensorF::full({1, 1, 1}, -1.0f)), DomainError);
  EXPECT_THROW(GeoField<float>(FieldKind::Depth, TensorF::zeros({1, 1, 1})), DomainError);
  EXPECT_NO_THROW(GeoField<float>(FieldKind::Depth, TensorF::zeros({1, 1, 1}), {0}));
}
