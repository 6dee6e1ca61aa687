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

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nash/errors.hpp"
#include "nash/ops.hpp"
#include "nash/quant.hpp"
#include "nash/rng.hpp"
#include "nash/tensor.hpp"

namespace nash {

/// Candidate operations of a NAS edge, in table order.
enum class OpKind : int { Zero = 0, MaxPool3 = 1, Identity = 2, Conv1 = 3, Conv3 = 4, Conv5 = 5 };

inline constexpr int kNumOps = 6;
inline constexpr std::array<OpKind, kNumOps> kAllOps{OpKind::Zero,  OpKind::MaxPool3, OpKind::Identity,
                                                     OpKind::Conv1, OpKind::Conv3,    OpKind::Conv5};

NLOHMANN_JSON_SERIALIZE_ENUM(OpKind, {{OpKind::Zero, "zero"},
                                      {OpKind::MaxPool3, "maxpool3"},
                                      {OpKind::Identity, "identity"},
                                      {OpKind::Conv1, "conv1"},
                                      {OpKind::Conv3, "conv3"},
                                      {OpKind::Conv5, "conv5"}})

inline std::string to_string(OpKind op) { return nlohmann::json(op).get<std::string>(); }
inline int index_of(OpKind op) { return static_cast<int>(op); }

inline OpKind parse_op(const std::string& s) {
  for (OpKind op : kAllOps) {
    if (to_string(op) == s) return op;
  }
  throw std::invalid_argument("unknown op '" + s + "'");
}

inline int kernel_size(OpKind op) {
  switch (op) {
    case OpKind::Conv1: return 1;
    case OpKind::Conv3: return 3;
    case OpKind::Conv5: return 5;
    default: return 0;
  }
}
inline bool is_conv(OpKind op) { return kernel_size(op) > 0; }

/// One convolutional group: channels in/out and the stride of its first layer.
struct GroupSpec {
  int in_channels = 8;
  int out_channels = 8;
  int stride = 1;
  friend bool operator==(const GroupSpec&, const GroupSpec&) = default;
};

inline void to_json(nlohmann::json& j, const GroupSpec& g) {
  j = {{"in_channels", g.in_channels}, {"out_channels", g.out_channels}, {"stride", g.stride}};
}
inline void from_json(const nlohmann::json& j, GroupSpec& g) {
  j.at("in_channels").get_to(g.in_channels);
  j.at("out_channels").get_to(g.out_channels);
  j.at("stride").get_to(g.stride);
}

struct EdgeShape {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  bool changes_shape() const { return stride != 1 || in_channels != out_channels; }
};

inline constexpr int kCellNodes = 5;
inline constexpr int kCellEdges = kCellNodes * (kCellNodes - 1) / 2;

struct EdgeId {
  int from = 0;
  int to = 0;
  friend bool operator==(const EdgeId&, const EdgeId&) = default;
};

/// All (i, j) with i < j, ordered by target node then source node.
inline std::vector<EdgeId> cell_edges() {
  std::vector<EdgeId> out;
  for (int j = 1; j < kCellNodes; ++j)
    for (int i = 0; i < j; ++i) out.push_back({i, j});
  return out;
}

inline int edge_index(int from, int to) {
  if (from < 0 || from >= to || to >= kCellNodes) throw std::invalid_argument("not a cell edge");
  return to * (to - 1) / 2 + from;
}

inline EdgeShape edge_shape(const GroupSpec& g, int from, int /*to*/) {
  if (from == 0) return {g.in_channels, g.out_channels, g.stride};
  return {g.out_channels, g.out_channels, 1};
}

/// Allowed ops per edge, indexed like cell_edges().
using OpMask = std::vector<std::vector<OpKind>>;

inline OpMask uniform_mask(const std::vector<OpKind>& ops) { return OpMask(kCellEdges, ops); }
inline OpMask full_mask() { return uniform_mask({kAllOps.begin(), kAllOps.end()}); }

/// Per-edge op choice for one sampled step.
using PathChoice = std::vector<OpKind>;

/// Quantizers of the three branch families inside a cell.
struct CellQuant {
  QuantSpec backbone_act, backbone_w;
  QuantSpec residual_act, residual_w;
  QuantSpec nas_act, nas_w;
  QuantSpec add_act;

  static CellQuant make(const BitWidthPlan& p, const QuantConfig& qc) {
    return {QuantSpec::relu(p.backbone_a, qc.relu_range), QuantSpec::weight(p.backbone_w),
            QuantSpec::relu(p.residual_a, qc.relu_range), QuantSpec::weight(p.residual_w),
            QuantSpec::relu(p.nas_a, qc.relu_range),      QuantSpec::weight(p.nas_w),
            qc.act2()};
  }
};

// ---------------------------------------------------------------------------
// Branch building blocks, shared by the search cell and the derived model so
// both run identical primitive sequences.

/// Quantized convolution: integer levels convolved, then per-channel scale.
inline Tensor qconv(const Tensor& x, const Tensor& w, const QuantSpec& wq, int stride, Tape* tape) {
  auto q = quantize_weight_levels(w, wq, tape);
  Tensor y = conv2d(x, q.levels, stride, w.dim(2) / 2, tape);
  return scale_channels(y, std::move(q.scales), tape);
}

/// Pooling branch; widens channels by cyclic replication when needed.
inline Tensor pool_branch(const Tensor& x, const EdgeShape& shape, Tape* tape) {
  Tensor y = maxpool2d(x, 3, shape.stride, 1, tape);
  if (shape.out_channels != shape.in_channels) y = channel_tile(y, shape.out_channels, tape);
  return y;
}

/// Backbone residual shortcut targets: node 2 from node 0, node 4 from node 2.
inline bool has_shortcut(int node) { return node == 2 || node == 4; }

/// He-normal initialization.
inline Tensor init_conv_weight(Rng& rng, int out, int in, int k) {
  Tensor w({out, in, k, k}, 0.0f, true);
  const double std = std::sqrt(2.0 / (static_cast<double>(in) * k * k));
  for (auto& v : w.data()) v = static_cast<float>(rng.normal() * std);
  return w;
}

/// Parameter names shared by the search cell, derived models and checkpoints.
namespace names {
inline std::string backbone(const std::string& prefix, int node) { return prefix + "bb" + std::to_string(node); }
inline std::string shortcut(const std::string& prefix, int node) { return prefix + "sc" + std::to_string(node); }
inline std::string nas(const std::string& prefix, int from, int to, OpKind op) {
  return prefix + "e" + std::to_string(from) + std::to_string(to) + "." + to_string(op);
}
}  // namespace names

struct DerivedNode {
  int pred = 0;
  OpKind op = OpKind::Conv3;
  friend bool operator==(const DerivedNode&, const DerivedNode&) = default;
};

/// Discretized cell: node j (1..4) keeps one predecessor and one op.
struct DerivedCell {
  std::vector<DerivedNode> nodes;  // nodes[j-1] describes node j
  BitWidthPlan plan;
  GroupSpec group;
  friend bool operator==(const DerivedCell&, const DerivedCell&) = default;
};

inline void to_json(nlohmann::json& j, const DerivedCell& d) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : d.nodes) nodes.push_back({{"pred", n.pred}, {"op", n.op}});
  j = {{"nodes", nodes}, {"plan", d.plan}, {"group_spec", d.group}};
}
inline void from_json(const nlohmann::json& j, DerivedCell& d) {
  d.nodes.clear();
  for (const auto& n : j.at("nodes")) {
    const auto op = parse_op(n.at("op").get<std::string>());
    d.nodes.push_back({n.at("pred").get<int>(), op});
  }
  j.at("plan").get_to(d.plan);
  j.at("group_spec").get_to(d.group);
  if (d.nodes.size() != kCellNodes - 1) throw FormatError("derived cell must list 4 nodes");
  for (std::size_t k = 0; k < d.nodes.size(); ++k) {
    const int node = static_cast<int>(k) + 1;
    if (d.nodes[k].pred < 0 || d.nodes[k].pred >= node) throw FormatError("derived cell predecessor out of range");
    if (d.nodes[k].op == OpKind::Zero) throw FormatError("derived cell may not keep a zero op");
  }
}

/// Gate scalars multiplied onto sampled branch outputs. Their gradients
/// are the per-edge signals the architecture parameters learn from.
struct SampledGates {
  std::vector<Tensor> gate;  // per edge; undefined where the path chose Zero
};

/// Softmax of one edge's architecture logits.
inline std::vector<float> softmax(std::span<const float> alpha) {
  std::vector<float> p(alpha.size());
  if (alpha.empty()) return p;
  const float mx = *std::max_element(alpha.begin(), alpha.end());
  double denom = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) denom += std::exp(static_cast<double>(alpha[i] - mx));
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    p[i] = static_cast<float>(std::exp(static_cast<double>(alpha[i] - mx)) / denom);
  }
  return p;
}

/// Straight-through softmax gradient for a hard categorical sample:
/// d/d alpha_i = g * p_k * (delta_ik - p_i), where k was sampled and g is
/// the gradient reaching its gate. Unsampled ops only move through the
/// coupling term.
inline std::vector<float> alpha_gradient(std::span<const float> probs, int sampled, float gate_grad) {
  std::vector<float> out(probs.size());
  const float pk = probs[static_cast<std::size_t>(sampled)];
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out[i] = gate_grad * pk * ((static_cast<int>(i) == sampled ? 1.0f : 0.0f) - probs[i]);
  }
  return out;
}

/// Backbone group plus the 5-node NAS DAG with per-edge candidate lists and
/// architecture logits.
class CellGraph {
 public:
  struct Edge {
    EdgeId id;
    EdgeShape shape;
    std::vector<OpKind> candidates;
    Tensor alpha;  // one logit per candidate
  };

  CellGraph(GroupSpec group, const OpMask& mask, BitWidthPlan plan, QuantConfig qc, std::string prefix = "")
      : group_(group), plan_(plan), quant_cfg_(qc), quant_(CellQuant::make(plan, qc)), prefix_(std::move(prefix)) {
    if (group.stride != 1 && group.stride != 2) throw std::invalid_argument("group stride must be 1 or 2");
    if (group.in_channels <= 0 || group.out_channels <= 0) throw std::invalid_argument("group channels must be positive");
    if (mask.size() != kCellEdges) throw std::invalid_argument("op mask must cover all 10 edges");
    const auto ids = cell_edges();
    for (int e = 0; e < kCellEdges; ++e) {
      Edge edge{ids[e], edge_shape(group, ids[e].from, ids[e].to), {}, {}};
      for (OpKind op : kAllOps) {
        const bool allowed = std::find(mask[e].begin(), mask[e].end(), op) != mask[e].end();
        if (!allowed) continue;
        // identity cannot change the tensor shape
        if (op == OpKind::Identity && edge.shape.changes_shape()) continue;
        edge.candidates.push_back(op);
      }
      if (edge.candidates.empty()) {
        throw std::invalid_argument("edge (" + std::to_string(ids[e].from) + "," + std::to_string(ids[e].to) +
                                    ") has no candidate op");
      }
      edge.alpha = Tensor({static_cast<int>(edge.candidates.size())}, 0.0f, true);
      edges_.push_back(std::move(edge));
    }
    exec_counts_.assign(kCellEdges, std::array<std::uint64_t, kNumOps>{});
  }

  const GroupSpec& group() const noexcept { return group_; }
  const BitWidthPlan& plan() const noexcept { return plan_; }
  const QuantConfig& quant_config() const noexcept { return quant_cfg_; }
  const CellQuant& quant() const noexcept { return quant_; }
  const std::string& prefix() const noexcept { return prefix_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  std::vector<Edge>& edges() noexcept { return edges_; }
  const Edge& edge(int from, int to) const { return edges_[edge_index(from, to)]; }

  /// Backbone depth: convolutions on the consecutive-node chain.
  int backbone_depth() const { return kCellNodes - 1; }

  /// He-initializes backbone, shortcut and every candidate convolution.
  void init_weights(Rng& rng) {
    params_.clear();
    for (int j = 1; j < kCellNodes; ++j) {
      const auto s = edge_shape(group_, j - 1, j);
      params_[names::backbone(prefix_, j)] = init_conv_weight(rng, s.out_channels, s.in_channels, 3);
      if (has_shortcut(j)) {
        const auto ss = edge_shape(group_, j - 2, j);
        if (ss.changes_shape()) params_[names::shortcut(prefix_, j)] = init_conv_weight(rng, ss.out_channels, ss.in_channels, 1);
      }
    }
    for (const auto& e : edges_) {
      for (OpKind op : e.candidates) {
        if (!is_conv(op)) continue;
        params_[names::nas(prefix_, e.id.from, e.id.to, op)] =
            init_conv_weight(rng, e.shape.out_channels, e.shape.in_channels, kernel_size(op));
      }
    }
  }

  std::map<std::string, Tensor>& params() noexcept { return params_; }
  const std::map<std::string, Tensor>& params() const noexcept { return params_; }

  std::vector<Tensor> weight_params() const {
    std::vector<Tensor> out;
    for (const auto& [_, t] : params_) out.push_back(t);
    return out;
  }
  std::vector<Tensor> alpha_params() const {
    std::vector<Tensor> out;
    for (const auto& e : edges_) out.push_back(e.alpha);
    return out;
  }

  std::vector<float> probabilities(int e) const { return softmax(edges_[e].alpha.data()); }

  /// Runs the cell with one op active per edge. When `gates` is non-null a
  /// unit gate is multiplied onto each active NAS branch output and returned
  /// for architecture-gradient attribution.
  Tensor forward(const Tensor& x, const PathChoice& path, Tape* tape = nullptr, SampledGates* gates = nullptr) {
    if (path.size() != kCellEdges) throw std::invalid_argument("path must choose one op for each of the 10 edges");
    if (x.rank() != 4 || x.dim(1) != group_.in_channels) {
      throw std::invalid_argument("cell input " + to_string(x.shape()) + " does not match group input channels");
    }
    if (params_.empty()) throw InvalidState("cell weights not initialized");
    if (gates) gates->gate.assign(kCellEdges, Tensor());
    std::array<Tensor, kCellNodes> node;
    node[0] = x;
    for (int j = 1; j < kCellNodes; ++j) {
      std::vector<Tensor> operands;
      operands.push_back(backbone_branch(node[j - 1], j, tape));
      if (has_shortcut(j)) operands.push_back(shortcut_branch(node[j - 2], j, tape));
      for (int i = 0; i < j; ++i) {
        const int e = edge_index(i, j);
        const OpKind op = path[e];
        const auto& cands = edges_[e].candidates;
        if (std::find(cands.begin(), cands.end(), op) == cands.end()) {
          throw std::invalid_argument("op " + to_string(op) + " is not a candidate on edge (" + std::to_string(i) +
                                      "," + std::to_string(j) + ")");
        }
        ++exec_counts_[e][index_of(op)];
        if (op == OpKind::Zero) continue;
        Tensor out = nas_branch(node[i], i, j, op, tape);
        if (gates) {
          Tensor g({1}, 1.0f, true);
          gates->gate[e] = g;
          out = gate_mul(out, g, tape);
        }
        operands.push_back(out);
      }
      for (std::size_t k = 1; k < operands.size(); ++k) {
        if (operands[k].shape() != operands[0].shape()) {
          throw InvalidState("cell shape invariant violated at node " + std::to_string(j) + ": " +
                             to_string(operands[k].shape()) + " vs " + to_string(operands[0].shape()));
        }
      }
      node[j] = add_n(operands, tape);
    }
    return node[kCellNodes - 1];
  }

  Tensor backbone_branch(const Tensor& x, int node, Tape* tape) const {
    Tensor a = act_quant(x, quant_.backbone_act, tape);
    Tensor y = qconv(a, params_.at(names::backbone(prefix_, node)), quant_.backbone_w, edge_shape(group_, node - 1, node).stride, tape);
    return act_quant(y, quant_.add_act, tape);
  }

  Tensor shortcut_branch(const Tensor& x, int node, Tape* tape) const {
    Tensor a = act_quant(x, quant_.residual_act, tape);
    const auto s = edge_shape(group_, node - 2, node);
    if (s.changes_shape()) a = qconv(a, params_.at(names::shortcut(prefix_, node)), quant_.residual_w, s.stride, tape);
    return act_quant(a, quant_.add_act, tape);
  }

  Tensor nas_branch(const Tensor& x, int from, int to, OpKind op, Tape* tape) const {
    const auto s = edge_shape(group_, from, to);
    Tensor a = act_quant(x, quant_.nas_act, tape);
    Tensor y;
    switch (op) {
      case OpKind::MaxPool3: y = pool_branch(a, s, tape); break;
      case OpKind::Identity: y = a; break;
      case OpKind::Conv1:
      case OpKind::Conv3:
      case OpKind::Conv5: y = qconv(a, params_.at(names::nas(prefix_, from, to, op)), quant_.nas_w, s.stride, tape); break;
      case OpKind::Zero: throw std::logic_error("zero op has no branch");
    }
    return act_quant(y, quant_.add_act, tape);
  }

  /// Converts gate gradients of the last gated forward into alpha gradients.
  void accumulate_alpha_gradients(const PathChoice& path, const SampledGates& gates) {
    for (int e = 0; e < kCellEdges; ++e) {
      const Tensor& g = gates.gate.at(e);
      if (!g.defined() || !g.has_grad()) continue;
      const auto& cands = edges_[e].candidates;
      const int k = static_cast<int>(std::find(cands.begin(), cands.end(), path[e]) - cands.begin());
      const auto probs = probabilities(e);
      const auto ga = alpha_gradient(probs, k, g.grad()[0]);
      auto dst = edges_[e].alpha.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) dst[i] += ga[i];
    }
  }

  /// How often each op ran on each edge.
  const std::vector<std::array<std::uint64_t, kNumOps>>& exec_counts() const noexcept { return exec_counts_; }
  void reset_exec_counts() { exec_counts_.assign(kCellEdges, std::array<std::uint64_t, kNumOps>{}); }

 private:
  GroupSpec group_;
  BitWidthPlan plan_;
  QuantConfig quant_cfg_;
  CellQuant quant_;
  std::string prefix_;
  std::vector<Edge> edges_;
  std::map<std::string, Tensor> params_;
  std::vector<std::array<std::uint64_t, kNumOps>> exec_counts_;
};

/// Builds a cell for `group`; alpha starts at zero (uniform after softmax).
inline CellGraph build_cell(const GroupSpec& group, const OpMask& mask, const BitWidthPlan& plan = {},
                            const QuantConfig& qc = {}, const std::string& prefix = "") {
  return CellGraph(group, mask, plan, qc, prefix);
}

/// Draws one candidate per edge with probability softmax(alpha).
inline PathChoice sample_path(const CellGraph& cell, Rng& rng) {
  PathChoice path(kCellEdges);
  for (int e = 0; e < kCellEdges; ++e) {
    const auto p = cell.probabilities(e);
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = p.size() - 1;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    path[e] = cell.edges()[e].candidates[pick];
  }
  return path;
}

/// Path that realizes a derived cell: chosen op on the kept edge, Zero
/// everywhere else. Requires Zero to be a candidate on every unused edge.
inline PathChoice path_for(const DerivedCell& d) {
  PathChoice path(kCellEdges, OpKind::Zero);
  for (std::size_t k = 0; k < d.nodes.size(); ++k) path[edge_index(d.nodes[k].pred, static_cast<int>(k) + 1)] = d.nodes[k].op;
  return path;
}

/// A ranked candidate for the kept op of one node.
struct RankedChoice {
  int pred;
  OpKind op;
  float prob;
};

/// Non-Zero candidates entering `node`, by probability descending; ties go to
/// the lower (predecessor, op index).
inline std::vector<RankedChoice> rank_candidates(const CellGraph& cell, int node) {
  std::vector<RankedChoice> ranked;
  for (int i = 0; i < node; ++i) {
    const int e = edge_index(i, node);
    const auto p = cell.probabilities(e);
    const auto& cands = cell.edges()[e].candidates;
    for (std::size_t k = 0; k < cands.size(); ++k) {
      if (cands[k] == OpKind::Zero) continue;
      ranked.push_back({i, cands[k], p[k]});
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedChoice& a, const RankedChoice& b) {
    if (a.prob != b.prob) return a.prob > b.prob;
    if (a.pred != b.pred) return a.pred < b.pred;
    return index_of(a.op) < index_of(b.op);
  });
  return ranked;
}

/// Keeps, for every node, the (predecessor, op) pair with the largest
/// softmax mass among non-Zero candidates.
inline DerivedCell derive_architecture(const CellGraph& cell) {
  DerivedCell d{{}, cell.plan(), cell.group()};
  for (int j = 1; j < kCellNodes; ++j) {
    const auto ranked = rank_candidates(cell, j);
    if (ranked.empty()) throw InvalidState("node " + std::to_string(j) + " has only Zero candidates");
    d.nodes.push_back({ranked.front().pred, ranked.front().op});
  }
  return d;
}

/// True when the kept op on `node` is a pooling branch that must change shape.
inline bool is_shape_changing_pool(const GroupSpec& g, int pred, int node, OpKind op) {
  return op == OpKind::MaxPool3 && edge_shape(g, pred, node).changes_shape();
}

}  // namespace nash
