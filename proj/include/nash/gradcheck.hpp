// Copyright (c) 2026 The nash Authors. All Rights Reserved.
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

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "nash/tensor.hpp"

namespace nash {

struct GradCheckResult {
  float max_rel_error = 0.0f;  // max_i |analytic_i - numeric_i| / max_j max(|analytic_j|, |numeric_j|)
  float max_abs_error = 0.0f;
  std::vector<float> analytic;
  std::vector<float> numeric;
};

/// Scalar-valued function of one tensor; builds onto `tape` when non-null.
using ScalarFn = std::function<Tensor(const Tensor& x, Tape* tape)>;

/// Compares the tape gradient of f at x with central differences of step h.
/// The error of each component is taken relative to the largest gradient
/// magnitude, so near-zero components do not dominate.
inline GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, float h) {
  GradCheckResult r;
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  Tape tape;
  Tensor loss = f(probe, &tape);
  tape.backward(loss);
  r.analytic.assign(probe.grad().begin(), probe.grad().end());

  r.numeric.resize(x.numel());
  Tensor work = x.clone();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float orig = work[i];
    const float up = orig + h, down = orig - h;  // divide by the step actually taken in float
    work[i] = up;
    const double fp = f(work, nullptr).item();
    work[i] = down;
    const double fm = f(work, nullptr).item();
    work[i] = orig;
    r.numeric[i] = static_cast<float>((fp - fm) / (static_cast<double>(up) - static_cast<double>(down)));
  }

  float scale = 0.0f;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    scale = std::max({scale, std::fabs(r.analytic[i]), std::fabs(r.numeric[i])});
  }
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float d = std::fabs(r.analytic[i] - r.numeric[i]);
    r.max_abs_error = std::max(r.max_abs_error, d);
    if (scale > 0.0f) r.max_rel_error = std::max(r.max_rel_error, d / scale);
  }
  return r;
}

}  // namespace nash
