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

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nash/cell.hpp"
#include "nash/errors.hpp"
#include "nash/ops.hpp"
#include "nash/quant.hpp"
#include "nash/rng.hpp"

namespace nash {

/// Stem convolution, a chain of cell groups, and a pooled linear classifier.
struct NetworkSpec {
  int in_channels = 3;
  int stem_channels = 8;
  int stem_stride = 2;
  std::vector<GroupSpec> groups{{8, 8, 1}, {8, 16, 2}};
  int classes = 4;
  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;

  void validate() const {
    if (in_channels <= 0 || stem_channels <= 0 || classes < 2) throw std::invalid_argument("network spec: bad sizes");
    if (stem_stride != 1 && stem_stride != 2) throw std::invalid_argument("network spec: stem stride must be 1 or 2");
    if (groups.empty()) throw std::invalid_argument("network spec: at least one group required");
    int c = stem_channels;
    for (const auto& g : groups) {
      if (g.in_channels != c) throw std::invalid_argument("network spec: group channels do not chain");
      if (g.stride != 1 && g.stride != 2) throw std::invalid_argument("network spec: group stride must be 1 or 2");
      if (g.out_channels <= 0) throw std::invalid_argument("network spec: group out_channels must be positive");
      c = g.out_channels;
    }
  }
  int feature_channels() const { return groups.back().out_channels; }
};

inline void to_json(nlohmann::json& j, const NetworkSpec& n) {
  j = {{"in_channels", n.in_channels}, {"stem_channels", n.stem_channels}, {"stem_stride", n.stem_stride},
       {"groups", n.groups},           {"classes", n.classes}};
}
inline void from_json(const nlohmann::json& j, NetworkSpec& n) {
  j.at("in_channels").get_to(n.in_channels);
  j.at("stem_channels").get_to(n.stem_channels);
  j.at("stem_stride").get_to(n.stem_stride);
  j.at("groups").get_to(n.groups);
  j.at("classes").get_to(n.classes);
}

inline std::string group_prefix(std::size_t k) { return "g" + std::to_string(k) + "."; }
inline const std::string kStemParam = "stem";
inline const std::string kHeadParam = "head";

inline QuantSpec input_quant(const QuantConfig& qc) { return QuantSpec::relu(qc.input_bits, 1.0f); }
inline QuantSpec head_act_quant(const QuantConfig& qc) { return QuantSpec::relu(qc.edge_bits, qc.relu_range); }

/// Quantized fully connected layer: integer levels, then per-output scale.
inline Tensor qlinear(const Tensor& x, const Tensor& w, const QuantSpec& wq, Tape* tape) {
  auto q = quantize_weight_levels(w, wq, tape);
  Tensor y = linear(x, q.levels, tape);
  return scale_channels(y, std::move(q.scales), tape);
}

/// Complete description of a trainable network: topology, quantizers, and the
/// discretized cell of every group (nullopt = backbone only).
struct Architecture {
  NetworkSpec net;
  Variant variant = Variant::original;
  WxAy bits;
  BitWidthPlan plan;
  QuantConfig quant;
  std::vector<std::optional<DerivedCell>> cells;
};

inline constexpr int kArchVersion = 1;

inline void to_json(nlohmann::json& j, const Architecture& a) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : a.cells) cells.push_back(c ? nlohmann::json(*c) : nlohmann::json(nullptr));
  j = {{"schema", "nash.arch"}, {"version", kArchVersion}, {"variant", a.variant}, {"bits", to_string(a.bits)},
       {"plan", a.plan},        {"quant", a.quant},        {"network", a.net},     {"cells", cells}};
}
inline void from_json(const nlohmann::json& j, Architecture& a) {
  if (j.value("schema", "") != "nash.arch" || j.value("version", 0) != kArchVersion) {
    throw FormatError("architecture document has unknown schema/version");
  }
  a.variant = parse_variant(j.at("variant").get<std::string>());
  a.bits = parse_wxay(j.at("bits").get<std::string>());
  j.at("plan").get_to(a.plan);
  j.at("quant").get_to(a.quant);
  j.at("network").get_to(a.net);
  a.cells.clear();
  for (const auto& c : j.at("cells")) {
    if (c.is_null()) a.cells.emplace_back(std::nullopt);
    else a.cells.emplace_back(c.get<DerivedCell>());
  }
}

enum class LayerKind { Input, ActQuant, QConv, MaxPool, ChannelTile, Add, GlobalAvgPool, QLinear };

/// One node of the plain feed-forward graph.
struct Layer {
  LayerKind kind = LayerKind::Input;
  std::string name;
  std::vector<int> inputs;
  QuantSpec quant;      // ActQuant: activation; QConv/QLinear: weight
  std::string param;    // QConv/QLinear weight name
  int stride = 1;       // QConv/MaxPool
  int out_channels = 0; // ChannelTile
  int group = -1;       // owning cell group, -1 for stem/head
  bool nas = false;     // belongs to a NAS branch
};

/// Discretized network as an explicit layer graph in topological order.
class Model {
 public:
  Model() = default;
  Model(Architecture arch, std::vector<Layer> layers, std::map<std::string, Tensor> params)
      : arch_(std::move(arch)), layers_(std::move(layers)), params_(std::move(params)) {}

  const Architecture& arch() const noexcept { return arch_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::map<std::string, Tensor>& params() noexcept { return params_; }
  const std::map<std::string, Tensor>& params() const noexcept { return params_; }

  std::vector<Tensor> weight_params() const {
    std::vector<Tensor> out;
    for (const auto& [_, t] : params_) out.push_back(t);
    return out;
  }

  /// Evaluates every layer; returns all layer outputs.
  std::vector<Tensor> forward_all(const Tensor& x, Tape* tape = nullptr) const {
    std::vector<Tensor> v(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      auto in = [&](std::size_t k) -> const Tensor& { return v[static_cast<std::size_t>(l.inputs.at(k))]; };
      switch (l.kind) {
        case LayerKind::Input: v[i] = x; break;
        case LayerKind::ActQuant: v[i] = act_quant(in(0), l.quant, tape); break;
        case LayerKind::QConv: v[i] = qconv(in(0), params_.at(l.param), l.quant, l.stride, tape); break;
        case LayerKind::MaxPool: v[i] = maxpool2d(in(0), 3, l.stride, 1, tape); break;
        case LayerKind::ChannelTile: v[i] = channel_tile(in(0), l.out_channels, tape); break;
        case LayerKind::Add: {
          std::vector<Tensor> ops;
          for (int id : l.inputs) ops.push_back(v[static_cast<std::size_t>(id)]);
          v[i] = add_n(ops, tape);
          break;
        }
        case LayerKind::GlobalAvgPool: v[i] = global_avg_pool(in(0), tape); break;
        case LayerKind::QLinear: v[i] = qlinear(in(0), params_.at(l.param), l.quant, tape); break;
      }
    }
    return v;
  }

  Tensor forward(const Tensor& x, Tape* tape = nullptr) const { return forward_all(x, tape).back(); }

 private:
  Architecture arch_;
  std::vector<Layer> layers_;
  std::map<std::string, Tensor> params_;
};

namespace detail {

class LayerGraphBuilder {
 public:
  int add(Layer l) {
    layers.push_back(std::move(l));
    return static_cast<int>(layers.size()) - 1;
  }
  int act(int in, const QuantSpec& q, std::string name, int group, bool nas) {
    return add({LayerKind::ActQuant, std::move(name), {in}, q, "", 1, 0, group, nas});
  }
  int conv(int in, const QuantSpec& wq, std::string param, int stride, int group, bool nas) {
    return add({LayerKind::QConv, param, {in}, wq, param, stride, 0, group, nas});
  }

  /// Layers of one cell; returns the id of the node-4 output.
  int cell(int in, int gi, const std::string& prefix, const GroupSpec& group,
           const std::optional<DerivedCell>& derived, const CellQuant& cq) {
    std::array<int, kCellNodes> node{};
    node[0] = in;
    for (int j = 1; j < kCellNodes; ++j) {
      const std::string tag = prefix + "n" + std::to_string(j) + ".";
      std::vector<int> operands;
      {
        const int a = act(node[j - 1], cq.backbone_act, tag + "bb.act1", gi, false);
        const int c = conv(a, cq.backbone_w, names::backbone(prefix, j), edge_shape(group, j - 1, j).stride, gi, false);
        operands.push_back(act(c, cq.add_act, tag + "bb.act2", gi, false));
      }
      if (has_shortcut(j)) {
        int a = act(node[j - 2], cq.residual_act, tag + "sc.act1", gi, false);
        const auto s = edge_shape(group, j - 2, j);
        if (s.changes_shape()) a = conv(a, cq.residual_w, names::shortcut(prefix, j), s.stride, gi, false);
        operands.push_back(act(a, cq.add_act, tag + "sc.act2", gi, false));
      }
      if (derived) {
        const auto& dn = derived->nodes.at(static_cast<std::size_t>(j - 1));
        const auto s = edge_shape(group, dn.pred, j);
        int a = act(node[dn.pred], cq.nas_act, tag + "nas.act1", gi, true);
        switch (dn.op) {
          case OpKind::MaxPool3:
            a = add({LayerKind::MaxPool, tag + "nas.pool", {a}, {}, "", s.stride, 0, gi, true});
            if (s.out_channels != s.in_channels) {
              a = add({LayerKind::ChannelTile, tag + "nas.concat", {a}, {}, "", 1, s.out_channels, gi, true});
            }
            break;
          case OpKind::Identity:
            if (s.changes_shape()) throw std::invalid_argument("identity op on a shape-changing edge");
            break;
          case OpKind::Conv1:
          case OpKind::Conv3:
          case OpKind::Conv5:
            a = conv(a, cq.nas_w, names::nas(prefix, dn.pred, j, dn.op), s.stride, gi, true);
            break;
          case OpKind::Zero:
            throw std::invalid_argument("derived cell keeps a zero op");
        }
        operands.push_back(act(a, cq.add_act, tag + "nas.act2", gi, true));
      }
      if (operands.size() == 1) {
        node[j] = operands[0];
      } else {
        node[j] = add({LayerKind::Add, tag + "add", operands, {}, "", 1, 0, gi, false});
      }
    }
    return node[kCellNodes - 1];
  }

  std::vector<Layer> layers;
};

}  // namespace detail

/// Parameter shapes required by an architecture, keyed by name.
inline std::map<std::string, Shape> parameter_shapes(const Architecture& arch) {
  std::map<std::string, Shape> out;
  const auto& net = arch.net;
  out[kStemParam] = {net.stem_channels, net.in_channels, 3, 3};
  for (std::size_t g = 0; g < net.groups.size(); ++g) {
    const auto& grp = net.groups[g];
    const auto prefix = group_prefix(g);
    for (int j = 1; j < kCellNodes; ++j) {
      const auto s = edge_shape(grp, j - 1, j);
      out[names::backbone(prefix, j)] = {s.out_channels, s.in_channels, 3, 3};
      if (has_shortcut(j)) {
        const auto ss = edge_shape(grp, j - 2, j);
        if (ss.changes_shape()) out[names::shortcut(prefix, j)] = {ss.out_channels, ss.in_channels, 1, 1};
      }
    }
    const auto& d = arch.cells.at(g);
    if (!d) continue;
    for (std::size_t k = 0; k < d->nodes.size(); ++k) {
      const auto& n = d->nodes[k];
      if (!is_conv(n.op)) continue;
      const auto s = edge_shape(grp, n.pred, static_cast<int>(k) + 1);
      out[names::nas(prefix, n.pred, static_cast<int>(k) + 1, n.op)] = {s.out_channels, s.in_channels,
                                                                         kernel_size(n.op), kernel_size(n.op)};
    }
  }
  out[kHeadParam] = {net.classes, net.feature_channels()};
  return out;
}

/// Builds the plain layer graph for `arch` with freshly He-initialized weights.
/// Rejects cells that contradict the variant (pooling under v4) or the plan.
inline Model build_final_model(const Architecture& arch, std::uint64_t seed) {
  arch.net.validate();
  if (arch.cells.size() != arch.net.groups.size()) {
    throw std::invalid_argument("architecture lists " + std::to_string(arch.cells.size()) + " cells for " +
                                std::to_string(arch.net.groups.size()) + " groups");
  }
  for (std::size_t g = 0; g < arch.cells.size(); ++g) {
    const auto& d = arch.cells[g];
    if (!d) continue;
    if (!(d->group == arch.net.groups[g])) throw std::invalid_argument("derived cell group does not match network");
    if (!(d->plan == arch.plan)) throw std::invalid_argument("derived cell plan does not match architecture plan");
    for (const auto& n : d->nodes) {
      if (arch.variant == Variant::v4 && n.op == OpKind::MaxPool3) {
        throw std::invalid_argument("max pooling kept in a cell built under the v4 plan");
      }
    }
  }
  if (arch.variant == Variant::original) {
    for (const auto& d : arch.cells) {
      if (d) throw std::invalid_argument("original variant carries no NAS cells");
    }
  }

  const CellQuant cq = CellQuant::make(arch.plan, arch.quant);
  detail::LayerGraphBuilder b;
  int x = b.add({LayerKind::Input, "input", {}, {}, "", 1, 0, -1, false});
  x = b.act(x, input_quant(arch.quant), "stem.act1", -1, false);
  x = b.conv(x, QuantSpec::weight(arch.quant.edge_bits), kStemParam, arch.net.stem_stride, -1, false);
  for (std::size_t g = 0; g < arch.net.groups.size(); ++g) {
    x = b.cell(x, static_cast<int>(g), group_prefix(g), arch.net.groups[g], arch.cells[g], cq);
  }
  x = b.act(x, head_act_quant(arch.quant), "head.act1", -1, false);
  x = b.add({LayerKind::GlobalAvgPool, "head.pool", {x}, {}, "", 1, 0, -1, false});
  b.add({LayerKind::QLinear, kHeadParam, {x}, QuantSpec::weight(arch.quant.edge_bits), kHeadParam, 1, 0, -1, false});

  Rng rng(seed);
  std::map<std::string, Tensor> params;
  for (const auto& [name, shape] : parameter_shapes(arch)) {
    Tensor w(shape, 0.0f, true);
    const std::size_t fan_in = w.numel() / static_cast<std::size_t>(shape[0]);
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w.data()) v = static_cast<float>(rng.normal() * std);
    params.emplace(name, std::move(w));
  }
  return Model(arch, std::move(b.layers), std::move(params));
}

/// Overwrites parameters of `m` with same-named tensors from `src`.
/// Returns how many were copied.
inline std::size_t copy_params(Model& m, const std::map<std::string, Tensor>& src) {
  std::size_t n = 0;
  for (auto& [name, t] : m.params()) {
    auto it = src.find(name);
    if (it == src.end()) continue;
    if (it->second.shape() != t.shape()) throw std::invalid_argument("shape mismatch copying parameter '" + name + "'");
    std::copy(it->second.data().begin(), it->second.data().end(), t.data().begin());
    ++n;
  }
  return n;
}

/// The layers of a single cell (input -> node 4) using the weights of `cell`.
/// Used to check that discretizing a searched cell preserves its function.
inline Model cell_as_model(const CellGraph& cell, const DerivedCell& derived) {
  detail::LayerGraphBuilder b;
  const int x = b.add({LayerKind::Input, "input", {}, {}, "", 1, 0, -1, false});
  b.cell(x, 0, cell.prefix(), cell.group(), derived, cell.quant());
  std::map<std::string, Tensor> params;
  for (const auto& l : b.layers) {
    if (!l.param.empty()) params.emplace(l.param, cell.params().at(l.param));
  }
  Architecture arch;
  arch.net.groups = {cell.group()};
  arch.plan = cell.plan();
  arch.quant = cell.quant_config();
  arch.cells = {derived};
  return Model(std::move(arch), std::move(b.layers), std::move(params));
}

/// Longest count of convolutions on any path through the layers of `group`.
inline int longest_conv_chain(const Model& m, int group) {
  const auto& ls = m.layers();
  std::vector<int> depth(ls.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < ls.size(); ++i) {
    int d = 0;
    for (int in : ls[i].inputs) d = std::max(d, depth[static_cast<std::size_t>(in)]);
    if (ls[i].group == group && ls[i].kind == LayerKind::QConv) ++d;
    if (ls[i].group != group) d = 0;
    depth[i] = d;
    best = std::max(best, d);
  }
  return best;
}

}  // namespace nash
