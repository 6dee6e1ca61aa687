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

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nash/data.hpp"
#include "nash/errors.hpp"
#include "nash/model.hpp"
#include "nash/ops.hpp"
#include "nash/optim.hpp"
#include "nash/rng.hpp"

namespace nash {

enum class LrSchedule { constant, step };

NLOHMANN_JSON_SERIALIZE_ENUM(LrSchedule, {{LrSchedule::constant, "constant"}, {LrSchedule::step, "step"}})

struct TrainConfig {
  int epochs = 20;
  int batch_size = 16;
  float lr = 0.02f;
  float momentum = 0.9f;
  LrSchedule schedule = LrSchedule::step;  // step: lr/10 from the middle epoch on
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(lr >= 0.0f)) throw std::invalid_argument("train: lr must be >= 0");
    if (!(momentum >= 0.0f && momentum < 1.0f)) throw std::invalid_argument("train: momentum must be in [0,1)");
  }

  float lr_at(int epoch) const {
    if (schedule == LrSchedule::step && epoch >= epochs / 2 && epochs > 1) return lr * 0.1f;
    return lr;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},     {"batch_size", c.batch_size}, {"lr", c.lr},
       {"momentum", c.momentum}, {"schedule", c.schedule},     {"seed", c.seed}};
}

/// Rank-based top-k hit: the label counts as within the top k when fewer
/// than k classes beat it. A class beats the label with a larger logit, or
/// an equal logit and a lower index.
inline bool topk_hit(std::span<const float> logits, int label, int k) {
  const float v = logits[static_cast<std::size_t>(label)];
  int better = 0;
  for (int c = 0; c < static_cast<int>(logits.size()); ++c) {
    const float u = logits[static_cast<std::size_t>(c)];
    if (u > v || (u == v && c < label)) ++better;
  }
  return better < k;
}

struct TopK {
  double top1 = 0.0;  // fractions in [0, 1]
  double top5 = 0.0;
};

/// Counts top-1 / top-5 hits of a [n, classes] logit block.
inline void count_topk(const Tensor& logits, std::span<const int> labels, std::size_t& hit1, std::size_t& hit5) {
  const int n = logits.dim(0), c = logits.dim(1);
  for (int i = 0; i < n; ++i) {
    const auto row = logits.data().subspan(static_cast<std::size_t>(i) * c, static_cast<std::size_t>(c));
    if (topk_hit(row, labels[static_cast<std::size_t>(i)], 1)) ++hit1;
    if (topk_hit(row, labels[static_cast<std::size_t>(i)], 5)) ++hit5;
  }
}

inline TopK topk_from_logits(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || static_cast<std::size_t>(logits.dim(0)) != labels.size()) {
    throw std::invalid_argument("topk: logits must be [n, classes] with one label per row");
  }
  if (labels.empty()) throw std::invalid_argument("topk: empty evaluation set");
  std::size_t h1 = 0, h5 = 0;
  count_topk(logits, labels, h1, h5);
  return {static_cast<double>(h1) / labels.size(), static_cast<double>(h5) / labels.size()};
}

inline TopK evaluate_topk(const Model& m, const Dataset& d, int batch_size = 64) {
  if (d.size() == 0) throw std::invalid_argument("topk: empty evaluation set");
  std::size_t h1 = 0, h5 = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < d.size(); start += static_cast<std::size_t>(batch_size)) {
    idx.clear();
    for (std::size_t i = start; i < std::min(d.size(), start + static_cast<std::size_t>(batch_size)); ++i) idx.push_back(i);
    auto [x, y] = d.batch(idx);
    count_topk(m.forward(x), y, h1, h5);
  }
  return {static_cast<double>(h1) / d.size(), static_cast<double>(h5) / d.size()};
}

/// Error rate in percent as reported: 100 minus accuracy in percent.
inline double error_pct(double accuracy_fraction) { return 100.0 - 100.0 * accuracy_fraction; }

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;  // mean training cross-entropy
  double top1 = 0.0;  // running training accuracy
  double top5 = 0.0;
};

inline void to_json(nlohmann::json& j, const EpochMetrics& m) {
  j = {{"epoch", m.epoch}, {"loss", m.loss}, {"top1", m.top1}, {"top5", m.top5}};
}

/// Minibatch SGD on cross-entropy over seeded shuffles of `d`. The model's
/// parameters are latent full-precision weights; every forward quantizes them.
inline std::vector<EpochMetrics> train_model(Model& m, const Dataset& d, const TrainConfig& cfg) {
  cfg.validate();
  d.validate();
  if (d.size() == 0) throw std::invalid_argument("train: empty dataset");
  auto params = m.weight_params();
  for (auto& p : params) p.set_requires_grad(true);
  SgdMomentum opt(params, cfg.lr, cfg.momentum);
  Rng rng(cfg.seed);
  std::vector<EpochMetrics> history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(cfg.lr_at(epoch));
    const auto order = shuffled_indices(d.size(), rng);
    double loss_sum = 0.0;
    std::size_t h1 = 0, h5 = 0, batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      auto [x, y] = d.batch(idx);
      Tape tape;
      Tensor logits = m.forward(x, &tape);
      Tensor loss = softmax_cross_entropy(logits, y, &tape);
      if (!std::isfinite(loss.item())) {
        throw NumericError("training loss is not finite in epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches) + "; lower the learning rate");
      }
      count_topk(logits, y, h1, h5);
      tape.backward(loss);
      opt.step();
      loss_sum += loss.item();
      ++batches;
    }
    history.push_back({epoch, loss_sum / static_cast<double>(batches), static_cast<double>(h1) / d.size(),
                       static_cast<double>(h5) / d.size()});
  }
  return history;
}

}  // namespace nash
