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

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "geovit/tensor.hpp"

namespace geovit {

struct GradCheckReport {
  bool passed = false;
  double max_error = 0.0;        // worst scaled error over all elements
  std::int64_t worst_index = -1;
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> error;     // |a - n| / max(1, |a|, |n|)
};

/// Compares the autodiff gradient of scalar-valued `f` at `x` against central
/// differences (f(x+h) - f(x-h)) / 2h, one element at a time.
///
/// The error is relative for gradients of magnitude above one and absolute
/// below, so vanishing gradients do not blow up the ratio.
inline GradCheckReport finite_diff_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& x,
                                         double h = 1e-5, double rtol = 1e-5) {
  TensorD leaf = x.detach();
  leaf.set_requires_grad(true);
  TensorD y = f(leaf);
  if (y.numel() != 1) throw RankError("finite_diff_check: f must be scalar-valued, got " + to_string(y.shape()));

  GradCheckReport report;
  if (y.requires_grad()) {
    backward(y);
    report.analytic.assign(leaf.grad_data().begin(), leaf.grad_data().end());
  }
  if (report.analytic.empty()) report.analytic.assign(static_cast<std::size_t>(x.numel()), 0.0);

  NoGradGuard no_grad;
  std::vector<double> probe = x.vec();
  report.numeric.resize(probe.size());
  report.error.resize(probe.size());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double fp = f(TensorD(x.shape(), probe)).item();
    probe[i] = saved - h;
    const double fm = f(TensorD(x.shape(), probe)).item();
    probe[i] = saved;
    const double num = (fp - fm) / (2.0 * h);
    const double a = report.analytic[i];
    const double err = std::abs(a - num) / std::max({1.0, std::abs(a), std::abs(num)});
    report.numeric[i] = num;
    report.error[i] = err;
    if (err > report.max_error || report.worst_index < 0) {
      report.max_error = std::max(report.max_error, err);
      if (err >= report.max_error) report.worst_index = static_cast<std::int64_t>(i);
    }
  }
  report.passed = std::isfinite(report.max_error) && report.max_error <= rtol;
  return report;
}

}  // namespace geovit
