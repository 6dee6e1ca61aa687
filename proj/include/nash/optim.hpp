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

#include <stdexcept>
#include <vector>

#include "nash/tensor.hpp"

namespace nash {

/// SGD with heavy-ball momentum: v <- momentum*v + grad; p <- p - lr*v.
/// Gradients are zeroed after each step.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor> params, float lr, float momentum = 0.0f)
      : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    if (!(lr >= 0.0f)) throw std::invalid_argument("learning rate must be non-negative");
    if (!(momentum >= 0.0f && momentum < 1.0f)) throw std::invalid_argument("momentum must be in [0,1)");
    velocity_.reserve(params_.size());
    for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0f);
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      auto& v = velocity_[i];
      auto data = p.data();
      if (!p.has_grad()) continue;
      const auto g = p.grad();
      for (std::size_t k = 0; k < data.size(); ++k) {
        v[k] = momentum_ * v[k] + g[k];
        data[k] -= lr_ * v[k];
      }
      p.zero_grad();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  float lr() const noexcept { return lr_; }
  void set_lr(float lr) { lr_ = lr; }
  const std::vector<Tensor>& params() const noexcept { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> velocity_;
  float lr_;
  float momentum_;
};

}  // namespace nash
