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
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nash/cell.hpp"
#include "nash/data.hpp"
#include "nash/errors.hpp"
#include "nash/model.hpp"
#include "nash/ops.hpp"
#include "nash/optim.hpp"
#include "nash/quant.hpp"
#include "nash/rng.hpp"

namespace nash {

struct SearchConfig {
  int epochs = 4;              // L
  int batches_per_epoch = 8;   // N
  int batch_size = 16;
  float lr_w = 0.05f;
  float lr_alpha = 0.3f;
  float momentum = 0.9f;
  std::uint64_t seed = 1;
  Variant variant = Variant::v1;
  WxAy bits;
  float split = 0.5f;          // fraction of samples used for weights
  bool allow_zero = true;      // offer the Zero op on every edge
  NetworkSpec net;
  QuantConfig quant;

  void validate() const {
    if (epochs < 1 || batches_per_epoch < 1 || batch_size < 1) {
      throw std::invalid_argument("search: epochs, batches_per_epoch and batch_size must be >= 1");
    }
    if (!(split > 0.0f && split < 1.0f)) throw std::invalid_argument("search: split must lie in (0,1)");
    if (!(lr_w >= 0.0f) || !(lr_alpha >= 0.0f)) throw std::invalid_argument("search: learning rates must be >= 0");
    if (variant == Variant::original) throw std::invalid_argument("search: the original backbone has nothing to search");
    net.validate();
    resolve_plan(variant, bits);
  }
};

inline void to_json(nlohmann::json& j, const SearchConfig& c) {
  j = {{"epochs", c.epochs},   {"batches_per_epoch", c.batches_per_epoch},
       {"batch_size", c.batch_size}, {"lr_w", c.lr_w},
       {"lr_alpha", c.lr_alpha}, {"momentum", c.momentum},
       {"seed", c.seed},       {"variant", c.variant},
       {"bits", to_string(c.bits)}, {"split", c.split},
       {"allow_zero", c.allow_zero}, {"network", c.net},
       {"quant", c.quant}};
}

/// One rule application of a variant, recorded for auditing.
struct AuditEvent {
  std::string action;  // "replace" (v1), "mask" (v2), "reject" (v3)
  int group = 0;
  int from = 0;
  int to = 0;
  OpKind op = OpKind::MaxPool3;        // op affected
  OpKind replacement = OpKind::Zero;   // op chosen instead (replace / reject)
  friend bool operator==(const AuditEvent&, const AuditEvent&) = default;
};

inline void to_json(nlohmann::json& j, const AuditEvent& e) {
  j = {{"action", e.action}, {"group", e.group}, {"from", e.from},
       {"to", e.to},         {"op", e.op},       {"replacement", e.replacement}};
}
inline void from_json(const nlohmann::json& j, AuditEvent& e) {
  j.at("action").get_to(e.action);
  j.at("group").get_to(e.group);
  j.at("from").get_to(e.from);
  j.at("to").get_to(e.to);
  e.op = parse_op(j.at("op").get<std::string>());
  e.replacement = parse_op(j.at("replacement").get<std::string>());
}

using AuditLog = std::vector<AuditEvent>;

// ---------------------------------------------------------------------------
// Variant rules

/// Candidate ops for the v4 plan: pooling dropped everywhere.
inline std::vector<OpKind> variant_v4_ops() {
  return {OpKind::Zero, OpKind::Identity, OpKind::Conv1, OpKind::Conv3, OpKind::Conv5};
}

/// Replaces every kept MaxPool3 that must change shape by a 1x1 convolution
/// with the same stride and channels.
inline DerivedCell variant_v1(const DerivedCell& derived, AuditLog* log = nullptr, int group = 0) {
  DerivedCell out = derived;
  for (std::size_t k = 0; k < out.nodes.size(); ++k) {
    auto& n = out.nodes[k];
    const int node = static_cast<int>(k) + 1;
    if (!is_shape_changing_pool(out.group, n.pred, node, n.op)) continue;
    if (log) log->push_back({"replace", group, n.pred, node, OpKind::MaxPool3, OpKind::Conv1});
    n.op = OpKind::Conv1;
  }
  return out;
}

/// Removes MaxPool3 from the candidate list of every shape-changing edge.
inline OpMask variant_v2_mask(const GroupSpec& group, const OpMask& mask, AuditLog* log = nullptr, int gi = 0) {
  OpMask out = mask;
  const auto ids = cell_edges();
  for (int e = 0; e < kCellEdges; ++e) {
    if (!edge_shape(group, ids[e].from, ids[e].to).changes_shape()) continue;
    auto& ops = out[e];
    auto it = std::find(ops.begin(), ops.end(), OpKind::MaxPool3);
    if (it == ops.end()) continue;
    ops.erase(it);
    if (log) log->push_back({"mask", gi, ids[e].from, ids[e].to, OpKind::MaxPool3, OpKind::MaxPool3});
  }
  return out;
}

/// Same cell with the v2 mask applied; weights are shared, logits restart
/// at zero for the edges whose candidate list changed.
inline CellGraph variant_v2_mask(const CellGraph& cell, AuditLog* log = nullptr, int gi = 0) {
  OpMask mask;
  for (const auto& e : cell.edges()) mask.push_back(e.candidates);
  CellGraph out(cell.group(), variant_v2_mask(cell.group(), mask, log, gi), cell.plan(), cell.quant_config(), cell.prefix());
  for (int e = 0; e < kCellEdges; ++e) {
    if (out.edges()[e].candidates == cell.edges()[e].candidates) {
      std::copy(cell.edges()[e].alpha.data().begin(), cell.edges()[e].alpha.data().end(), out.edges()[e].alpha.data().begin());
    }
  }
  for (const auto& [name, t] : cell.params()) out.params()[name] = t;
  return out;
}

/// Per node, walks the ranked candidates and keeps the first that is not a
/// shape-changing MaxPool3.
inline DerivedCell variant_v3_reject(const CellGraph& cell, AuditLog* log = nullptr, int gi = 0) {
  DerivedCell d{{}, cell.plan(), cell.group()};
  for (int j = 1; j < kCellNodes; ++j) {
    const auto ranked = rank_candidates(cell, j);
    std::vector<const RankedChoice*> rejected;
    const RankedChoice* pick = nullptr;
    for (const auto& r : ranked) {
      if (is_shape_changing_pool(cell.group(), r.pred, j, r.op)) {
        rejected.push_back(&r);
        continue;
      }
      pick = &r;
      break;
    }
    if (!pick) throw InvalidState("node " + std::to_string(j) + " has no acceptable candidate");
    if (log) {
      for (const auto* r : rejected) log->push_back({"reject", gi, r->pred, j, r->op, pick->op});
    }
    d.nodes.push_back({pick->pred, pick->op});
  }
  return d;
}

/// Candidate mask for a group under a variant, before any cell is built.
inline OpMask variant_mask(Variant v, const GroupSpec& group, bool allow_zero, AuditLog* log = nullptr, int gi = 0) {
  std::vector<OpKind> ops = v == Variant::v4 ? variant_v4_ops() : std::vector<OpKind>(kAllOps.begin(), kAllOps.end());
  if (!allow_zero) ops.erase(std::remove(ops.begin(), ops.end(), OpKind::Zero), ops.end());
  OpMask mask = uniform_mask(ops);
  if (v == Variant::v2) mask = variant_v2_mask(group, mask, log, gi);
  return mask;
}

/// Discretizes a searched cell according to the variant rule.
inline DerivedCell derive_for_variant(Variant v, const CellGraph& cell, AuditLog* log = nullptr, int gi = 0) {
  switch (v) {
    case Variant::v1: return variant_v1(derive_architecture(cell), log, gi);
    case Variant::v3: return variant_v3_reject(cell, log, gi);
    case Variant::v2:
    case Variant::v4: return derive_architecture(cell);
    case Variant::original: break;
  }
  throw std::invalid_argument("original variant has no searched cell");
}

// ---------------------------------------------------------------------------
// Search network

/// Stem, one searchable cell per group, and the classifier head. Parameter
/// names match build_final_model so searched weights can seed training.
class SearchNetwork {
 public:
  SearchNetwork(const SearchConfig& cfg, AuditLog* log = nullptr)
      : net_(cfg.net), plan_(resolve_plan(cfg.variant, cfg.bits)), quant_(cfg.quant) {
    net_.validate();
    for (std::size_t g = 0; g < net_.groups.size(); ++g) {
      const int gi = static_cast<int>(g);
      cells_.emplace_back(net_.groups[g], variant_mask(cfg.variant, net_.groups[g], cfg.allow_zero, log, gi), plan_, quant_,
                          group_prefix(g));
    }
  }

  void init_weights(Rng& rng) {
    edge_params_[kStemParam] = init_conv_weight(rng, net_.stem_channels, net_.in_channels, 3);
    for (auto& c : cells_) c.init_weights(rng);
    Tensor head({net_.classes, net_.feature_channels()}, 0.0f, true);
    const double std = std::sqrt(2.0 / net_.feature_channels());
    for (auto& v : head.data()) v = static_cast<float>(rng.normal() * std);
    edge_params_[kHeadParam] = head;
  }

  std::vector<CellGraph>& cells() noexcept { return cells_; }
  const std::vector<CellGraph>& cells() const noexcept { return cells_; }
  const BitWidthPlan& plan() const noexcept { return plan_; }

  std::vector<Tensor> weight_params() const {
    std::vector<Tensor> out;
    for (const auto& [_, t] : edge_params_) out.push_back(t);
    for (const auto& c : cells_) {
      auto w = c.weight_params();
      out.insert(out.end(), w.begin(), w.end());
    }
    return out;
  }
  std::vector<Tensor> alpha_params() const {
    std::vector<Tensor> out;
    for (const auto& c : cells_) {
      auto a = c.alpha_params();
      out.insert(out.end(), a.begin(), a.end());
    }
    return out;
  }
  std::map<std::string, Tensor> named_weights() const {
    std::map<std::string, Tensor> out = edge_params_;
    for (const auto& c : cells_) out.insert(c.params().begin(), c.params().end());
    return out;
  }

  std::vector<PathChoice> sample(Rng& rng) const {
    std::vector<PathChoice> paths;
    for (const auto& c : cells_) paths.push_back(sample_path(c, rng));
    return paths;
  }

  Tensor forward(const Tensor& x, const std::vector<PathChoice>& paths, Tape* tape = nullptr,
                 std::vector<SampledGates>* gates = nullptr) {
    if (paths.size() != cells_.size()) throw std::invalid_argument("one path per cell required");
    if (gates) gates->assign(cells_.size(), {});
    Tensor h = act_quant(x, input_quant(quant_), tape);
    h = qconv(h, edge_params_.at(kStemParam), QuantSpec::weight(quant_.edge_bits), net_.stem_stride, tape);
    for (std::size_t g = 0; g < cells_.size(); ++g) {
      h = cells_[g].forward(h, paths[g], tape, gates ? &(*gates)[g] : nullptr);
    }
    h = act_quant(h, head_act_quant(quant_), tape);
    h = global_avg_pool(h, tape);
    return qlinear(h, edge_params_.at(kHeadParam), QuantSpec::weight(quant_.edge_bits), tape);
  }

 private:
  NetworkSpec net_;
  BitWidthPlan plan_;
  QuantConfig quant_;
  std::vector<CellGraph> cells_;
  std::map<std::string, Tensor> edge_params_;
};

// ---------------------------------------------------------------------------
// Bilevel loop

/// Seeded disjoint split; the first part (fraction `frac`) trains weights,
/// the second drives the architecture logits.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, float frac, std::uint64_t seed) {
  if (d.size() < 2) throw std::invalid_argument("split_dataset needs at least 2 samples");
  if (!(frac > 0.0f && frac < 1.0f)) throw std::invalid_argument("split fraction must lie in (0,1)");
  Rng rng(seed);
  const auto idx = shuffled_indices(d.size(), rng);
  const auto n_first = static_cast<std::size_t>(std::llround(static_cast<double>(frac) * static_cast<double>(d.size())));
  if (n_first == 0 || n_first == d.size()) throw std::invalid_argument("split leaves one side empty");
  const std::span<const std::size_t> all(idx);
  return {d.subset(all.first(n_first)), d.subset(all.subspan(n_first))};
}

/// A mini-batch as tensors.
struct Batch {
  Tensor x;
  std::vector<int> y;
};

inline Batch make_batch(const Dataset& d, std::span<const std::size_t> idx) {
  auto [x, y] = d.batch(idx);
  return {std::move(x), std::move(y)};
}

/// Optimizers and sampling state of one search.
struct SearchState {
  SearchNetwork net;
  SgdMomentum opt_w;
  SgdMomentum opt_alpha;
  Rng rng;
};

inline void check_finite(float loss, const char* phase, int step) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string(phase) + " loss is not finite at step " + std::to_string(step) +
                       "; lower the learning rate");
  }
}

struct StepLosses {
  float val_loss = 0.0f;
  float train_loss = 0.0f;
};

/// One alternating step. Phase 1 samples a path, runs the validation batch
/// with the weights frozen and updates only the logits; phase 2 samples a
/// fresh path, runs the training batch with the logits frozen and updates
/// only the weights.
inline StepLosses search_step(SearchState& s, const Batch& val, const Batch& train, int step = 0) {
  if (val.y.empty() || train.y.empty()) throw std::invalid_argument("search_step needs non-empty batches");
  StepLosses out;
  const auto weights = s.net.weight_params();
  {
    for (auto w : weights) w.set_requires_grad(false);
    const auto paths = s.net.sample(s.rng);
    std::vector<SampledGates> gates;
    Tape tape;
    Tensor logits = s.net.forward(val.x, paths, &tape, &gates);
    Tensor loss = softmax_cross_entropy(logits, val.y, &tape);
    out.val_loss = loss.item();
    for (auto w : weights) w.set_requires_grad(true);
    check_finite(out.val_loss, "validation", step);
    tape.backward(loss);
    for (std::size_t g = 0; g < s.net.cells().size(); ++g) s.net.cells()[g].accumulate_alpha_gradients(paths[g], gates[g]);
    s.opt_alpha.step();
  }
  {
    const auto paths = s.net.sample(s.rng);
    Tape tape;
    Tensor logits = s.net.forward(train.x, paths, &tape);
    Tensor loss = softmax_cross_entropy(logits, train.y, &tape);
    out.train_loss = loss.item();
    check_finite(out.train_loss, "training", step);
    tape.backward(loss);
    s.opt_w.step();
  }
  return out;
}

struct SearchResult {
  SearchConfig config;
  std::vector<DerivedCell> cells;                         // one per group
  std::vector<std::vector<std::vector<float>>> alpha;     // per epoch: flattened logits per edge (group-major)
  std::vector<float> val_loss;                            // mean per epoch
  std::vector<float> train_loss;                          // mean per epoch
  AuditLog audit;
};

inline constexpr int kSearchResultVersion = 1;

inline void to_json(nlohmann::json& j, const SearchResult& r) {
  j = {{"schema", "nash.search"}, {"version", kSearchResultVersion}, {"config", r.config},
       {"cells", r.cells},        {"alpha_history", r.alpha},        {"val_loss", r.val_loss},
       {"train_loss", r.train_loss}, {"audit", r.audit}};
}

/// Reads the parts needed downstream (cells, audit, losses).
inline void from_json(const nlohmann::json& j, SearchResult& r) {
  if (j.value("schema", "") != "nash.search" || j.value("version", 0) != kSearchResultVersion) {
    throw FormatError("search result has unknown schema/version");
  }
  j.at("cells").get_to(r.cells);
  j.at("alpha_history").get_to(r.alpha);
  j.at("val_loss").get_to(r.val_loss);
  j.at("train_loss").get_to(r.train_loss);
  j.at("audit").get_to(r.audit);
}

/// Full search: L epochs of N alternating steps, then the variant rule.
inline SearchResult run_search(const SearchConfig& cfg, const Dataset& d) {
  cfg.validate();
  d.validate();
  if (d.channels != cfg.net.in_channels || d.classes != cfg.net.classes) {
    throw std::invalid_argument("dataset geometry does not match the network spec");
  }
  SearchResult r;
  r.config = cfg;
  auto [train, val] = split_dataset(d, cfg.split, Rng::mix(cfg.seed, 1));

  Rng init_rng(Rng::mix(cfg.seed, 2));
  SearchNetwork net(cfg, &r.audit);
  net.init_weights(init_rng);
  SearchState s{net, SgdMomentum(net.weight_params(), cfg.lr_w, cfg.momentum),
                SgdMomentum(net.alpha_params(), cfg.lr_alpha, 0.0f), Rng(Rng::mix(cfg.seed, 3))};

  Rng order(Rng::mix(cfg.seed, 4));
  std::vector<std::size_t> tperm, vperm;
  std::size_t tpos = 0, vpos = 0;
  auto next = [&](const Dataset& ds, std::vector<std::size_t>& perm, std::size_t& pos) {
    std::vector<std::size_t> idx;
    const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), ds.size());
    while (idx.size() < want) {
      if (pos >= perm.size()) {
        perm = shuffled_indices(ds.size(), order);
        pos = 0;
      }
      idx.push_back(perm[pos++]);
    }
    return make_batch(ds, idx);
  };

  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double vsum = 0.0, tsum = 0.0;
    for (int b = 0; b < cfg.batches_per_epoch; ++b, ++step) {
      const Batch vb = next(val, vperm, vpos);
      const Batch tb = next(train, tperm, tpos);
      const auto l = search_step(s, vb, tb, step);
      vsum += l.val_loss;
      tsum += l.train_loss;
    }
    r.val_loss.push_back(static_cast<float>(vsum / cfg.batches_per_epoch));
    r.train_loss.push_back(static_cast<float>(tsum / cfg.batches_per_epoch));
    std::vector<std::vector<float>> snapshot;
    for (const auto& a : s.net.alpha_params()) snapshot.emplace_back(a.data().begin(), a.data().end());
    r.alpha.push_back(std::move(snapshot));
  }
  for (std::size_t g = 0; g < s.net.cells().size(); ++g) {
    r.cells.push_back(derive_for_variant(cfg.variant, s.net.cells()[g], &r.audit, static_cast<int>(g)));
  }
  return r;
}

/// Architecture of a finished search, ready for build_final_model.
inline Architecture architecture_of(const SearchResult& r) {
  Architecture a;
  a.net = r.config.net;
  a.variant = r.config.variant;
  a.bits = r.config.bits;
  a.plan = resolve_plan(r.config.variant, r.config.bits);
  a.quant = r.config.quant;
  for (const auto& c : r.cells) a.cells.emplace_back(c);
  return a;
}

/// Backbone-only architecture for the unmodified baseline.
inline Architecture original_architecture(const NetworkSpec& net, WxAy bits, const QuantConfig& qc) {
  Architecture a;
  a.net = net;
  a.variant = Variant::original;
  a.bits = bits;
  a.plan = resolve_plan(Variant::original, bits);
  a.quant = qc;
  a.cells.assign(net.groups.size(), std::nullopt);
  return a;
}

}  // namespace nash
