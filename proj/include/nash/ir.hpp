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
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nash/errors.hpp"
#include "nash/model.hpp"
#include "nash/ops.hpp"
#include "nash/quant.hpp"
#include "nash/tensor.hpp"

namespace nash {

// Inference graph in the style of a FINN dataflow model. Tensor shapes are
// per sample ([C,H,W] or [F]); the interpreter adds the batch axis.
//
// Node semantics (x = first input, per element unless noted):
//   Input           the network input
//   Conv            cross-correlation with integer-valued `weights` [M,C,K,K],
//                   `stride`, padding K/2; `wbits` is the weight precision
//   MaxPool         `kernel` x `kernel`, `stride`, `pad`, -inf padding
//   Add             sum of all inputs, left to right, plus `constant` when
//                   `has_constant` (then exactly one input)
//   Mul             x * `channel_scale`[c] (one value, or one per channel)
//   MultiThreshold  count of `thresholds` t with x >= t, plus `out_bias`;
//                   `obits` bits cover the output range
//   Concat          inputs stacked along channels
//   GlobalAvgPool   mean over H and W
//   Linear          x[F] times integer-valued `weights` [O,F]
enum class IrOp { Input, Conv, MaxPool, Add, Mul, MultiThreshold, Concat, GlobalAvgPool, Linear };

NLOHMANN_JSON_SERIALIZE_ENUM(IrOp, {{IrOp::Input, "Input"},
                                    {IrOp::Conv, "Conv"},
                                    {IrOp::MaxPool, "MaxPool"},
                                    {IrOp::Add, "Add"},
                                    {IrOp::Mul, "Mul"},
                                    {IrOp::MultiThreshold, "MultiThreshold"},
                                    {IrOp::Concat, "Concat"},
                                    {IrOp::GlobalAvgPool, "GlobalAvgPool"},
                                    {IrOp::Linear, "Linear"}})

inline std::string to_string(IrOp op) { return nlohmann::json(op).get<std::string>(); }

struct IrNode {
  std::string name;
  IrOp op = IrOp::Input;
  std::vector<int> inputs{};
  Shape shape{};  // output, per sample

  // Conv / Linear
  Shape weight_shape{};
  std::vector<float> weights{};
  int wbits = 0;
  // Conv / MaxPool
  int stride = 1;
  int kernel = 0;
  int pad = 0;
  // Add
  bool has_constant = false;
  float constant = 0.0f;
  // Mul
  std::vector<float> channel_scale{};
  // MultiThreshold
  std::vector<float> thresholds{};
  float out_bias = 0.0f;
  int obits = 0;

  friend bool operator==(const IrNode&, const IrNode&) = default;
};

struct GraphIR {
  std::vector<IrNode> nodes;  // topological order
  int output = -1;

  friend bool operator==(const GraphIR&, const GraphIR&) = default;

  int add(IrNode n) {
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  }

  /// Indices of nodes reading node `i`'s output (once per reading node).
  std::vector<int> consumers(int i) const {
    std::vector<int> out;
    for (int k = 0; k < static_cast<int>(nodes.size()); ++k) {
      const auto& in = nodes[static_cast<std::size_t>(k)].inputs;
      if (std::find(in.begin(), in.end(), i) != in.end()) out.push_back(k);
    }
    return out;
  }

  std::size_t count(IrOp op) const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [op](const IrNode& n) { return n.op == op; }));
  }
};

// ---------------------------------------------------------------------------
// Shape inference and validation

inline Shape infer_shape(const GraphIR& g, const IrNode& n) {
  auto in = [&](std::size_t k) -> const Shape& { return g.nodes.at(static_cast<std::size_t>(n.inputs.at(k))).shape; };
  auto need = [&](std::size_t count) {
    if (n.inputs.size() != count) {
      throw FormatError("node '" + n.name + "' (" + to_string(n.op) + ") expects " + std::to_string(count) + " input(s)");
    }
  };
  switch (n.op) {
    case IrOp::Input:
      if (!n.inputs.empty() || n.shape.empty()) throw FormatError("input node '" + n.name + "' needs a shape and no inputs");
      return n.shape;
    case IrOp::Conv: {
      need(1);
      const auto& s = in(0);
      if (s.size() != 3 || n.weight_shape.size() != 4 || n.weight_shape[1] != s[0] || n.weight_shape[2] != n.weight_shape[3]) {
        throw FormatError("conv node '" + n.name + "' has inconsistent weight shape");
      }
      if (n.weights.size() != numel(n.weight_shape)) throw FormatError("conv node '" + n.name + "' weight count mismatch");
      const auto geo = kernels::ConvGeometry::make({1, s[0], s[1], s[2]}, n.weight_shape[0], n.weight_shape[2], n.stride,
                                                   n.weight_shape[2] / 2);
      return {geo.m, geo.oh, geo.ow};
    }
    case IrOp::MaxPool: {
      need(1);
      const auto& s = in(0);
      if (s.size() != 3) throw FormatError("maxpool node '" + n.name + "' needs a [C,H,W] input");
      const auto geo = kernels::PoolGeometry::make({1, s[0], s[1], s[2]}, n.kernel, n.stride, n.pad);
      return {geo.c, geo.oh, geo.ow};
    }
    case IrOp::Add: {
      if (n.inputs.empty()) throw FormatError("add node '" + n.name + "' has no inputs");
      if (n.has_constant && n.inputs.size() != 1) throw FormatError("add node '" + n.name + "' with a constant takes one input");
      if (!n.has_constant && n.inputs.size() < 2) throw FormatError("add node '" + n.name + "' needs two or more inputs");
      for (std::size_t k = 1; k < n.inputs.size(); ++k) {
        if (in(k) != in(0)) throw FormatError("add node '" + n.name + "' has mismatched input shapes");
      }
      return in(0);
    }
    case IrOp::Mul: {
      need(1);
      const auto& s = in(0);
      if (n.channel_scale.size() != 1 && n.channel_scale.size() != static_cast<std::size_t>(s.at(0))) {
        throw FormatError("mul node '" + n.name + "' scale length does not match channels");
      }
      return s;
    }
    case IrOp::MultiThreshold:
      need(1);
      if (!std::is_sorted(n.thresholds.begin(), n.thresholds.end())) {
        throw FormatError("multithreshold node '" + n.name + "' thresholds must be ascending");
      }
      return in(0);
    case IrOp::Concat: {
      if (n.inputs.empty()) throw FormatError("concat node '" + n.name + "' has no inputs");
      Shape s = in(0);
      if (s.size() != 3) throw FormatError("concat node '" + n.name + "' needs [C,H,W] inputs");
      for (std::size_t k = 1; k < n.inputs.size(); ++k) {
        if (in(k).size() != 3 || in(k)[1] != s[1] || in(k)[2] != s[2]) throw FormatError("concat node '" + n.name + "' spatial mismatch");
        s[0] += in(k)[0];
      }
      return s;
    }
    case IrOp::GlobalAvgPool:
      need(1);
      if (in(0).size() != 3) throw FormatError("pool node '" + n.name + "' needs a [C,H,W] input");
      return {in(0)[0]};
    case IrOp::Linear:
      need(1);
      if (in(0).size() != 1 || n.weight_shape.size() != 2 || n.weight_shape[1] != in(0)[0]) {
        throw FormatError("linear node '" + n.name + "' has inconsistent weight shape");
      }
      if (n.weights.size() != numel(n.weight_shape)) throw FormatError("linear node '" + n.name + "' weight count mismatch");
      return {n.weight_shape[0]};
  }
  throw FormatError("node '" + n.name + "' has an unknown op");
}

/// Checks topological order, input references and every recorded shape.
inline void validate(const GraphIR& g) {
  if (g.nodes.empty()) throw FormatError("graph has no nodes");
  if (g.output < 0 || g.output >= static_cast<int>(g.nodes.size())) throw FormatError("graph output index out of range");
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    for (int in : n.inputs) {
      if (in < 0 || in >= static_cast<int>(i)) throw FormatError("node '" + n.name + "' reads a later or missing node");
    }
    if (infer_shape(g, n) != n.shape) {
      throw FormatError("node '" + n.name + "' records shape " + to_string(n.shape) + " but computes " +
                        to_string(infer_shape(g, n)));
    }
  }
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kIrVersion = 1;

inline void to_json(nlohmann::json& j, const IrNode& n) {
  j = {{"name", n.name}, {"op", n.op}, {"inputs", n.inputs}, {"shape", n.shape}};
  switch (n.op) {
    case IrOp::Conv:
      j["stride"] = n.stride;
      [[fallthrough]];
    case IrOp::Linear:
      j["weight_shape"] = n.weight_shape;
      j["weights"] = n.weights;
      j["wbits"] = n.wbits;
      break;
    case IrOp::MaxPool:
      j["kernel"] = n.kernel;
      j["stride"] = n.stride;
      j["pad"] = n.pad;
      break;
    case IrOp::Add:
      if (n.has_constant) j["constant"] = n.constant;
      break;
    case IrOp::Mul: j["channel_scale"] = n.channel_scale; break;
    case IrOp::MultiThreshold:
      j["thresholds"] = n.thresholds;
      j["out_bias"] = n.out_bias;
      j["obits"] = n.obits;
      break;
    default: break;
  }
}

inline void from_json(const nlohmann::json& j, IrNode& n) {
  j.at("name").get_to(n.name);
  j.at("op").get_to(n.op);
  j.at("inputs").get_to(n.inputs);
  j.at("shape").get_to(n.shape);
  switch (n.op) {
    case IrOp::Conv:
      j.at("stride").get_to(n.stride);
      [[fallthrough]];
    case IrOp::Linear:
      j.at("weight_shape").get_to(n.weight_shape);
      j.at("weights").get_to(n.weights);
      j.at("wbits").get_to(n.wbits);
      break;
    case IrOp::MaxPool:
      j.at("kernel").get_to(n.kernel);
      j.at("stride").get_to(n.stride);
      j.at("pad").get_to(n.pad);
      break;
    case IrOp::Add:
      n.has_constant = j.contains("constant");
      if (n.has_constant) j.at("constant").get_to(n.constant);
      break;
    case IrOp::Mul: j.at("channel_scale").get_to(n.channel_scale); break;
    case IrOp::MultiThreshold:
      j.at("thresholds").get_to(n.thresholds);
      j.at("out_bias").get_to(n.out_bias);
      j.at("obits").get_to(n.obits);
      break;
    default: break;
  }
}

inline void to_json(nlohmann::json& j, const GraphIR& g) {
  j = {{"schema", "nash.ir"}, {"version", kIrVersion}, {"output", g.output}, {"nodes", g.nodes}};
}

inline void from_json(const nlohmann::json& j, GraphIR& g) {
  try {
    if (j.value("schema", "") != "nash.ir" || j.value("version", 0) != kIrVersion) {
      throw FormatError("IR document has unknown schema/version");
    }
    j.at("nodes").get_to(g.nodes);
    j.at("output").get_to(g.output);
    validate(g);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("IR document: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("IR document: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Interpreter

/// Evaluates every node on a batch `x` of shape [N, ...input shape].
inline std::vector<Tensor> interpret_all(const GraphIR& g, const Tensor& x) {
  std::vector<Tensor> v(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const IrNode& n = g.nodes[i];
    auto in = [&](std::size_t k) -> const Tensor& { return v[static_cast<std::size_t>(n.inputs.at(k))]; };
    switch (n.op) {
      case IrOp::Input: {
        if (x.rank() != n.shape.size() + 1 || !std::equal(n.shape.begin(), n.shape.end(), x.shape().begin() + 1)) {
          throw std::invalid_argument("interpreter input " + to_string(x.shape()) + " does not match " + to_string(n.shape));
        }
        v[i] = x;
        break;
      }
      case IrOp::Conv: v[i] = conv2d(in(0), Tensor(n.weight_shape, n.weights), n.stride, n.weight_shape[2] / 2); break;
      case IrOp::MaxPool: v[i] = maxpool2d(in(0), n.kernel, n.stride, n.pad); break;
      case IrOp::Add: {
        if (n.has_constant) {
          Tensor y = in(0).clone();
          for (auto& e : y.data()) e += n.constant;
          v[i] = y;
        } else {
          std::vector<Tensor> ops;
          for (int id : n.inputs) ops.push_back(v[static_cast<std::size_t>(id)]);
          v[i] = add_n(ops);
        }
        break;
      }
      case IrOp::Mul: v[i] = scale_channels(in(0), n.channel_scale); break;
      case IrOp::MultiThreshold: {
        const Tensor& a = in(0);
        Tensor y(a.shape());
        auto ys = y.data();
        for (std::size_t k = 0; k < ys.size(); ++k) {
          ys[k] = static_cast<float>(threshold_count(n.thresholds, a[k])) + n.out_bias;
        }
        v[i] = y;
        break;
      }
      case IrOp::Concat: {
        const int batch = in(0).dim(0);
        Tensor y({batch, n.shape[0], n.shape[1], n.shape[2]});
        const std::size_t plane = static_cast<std::size_t>(n.shape[1]) * n.shape[2];
        auto ys = y.data();
        std::size_t dst = 0;
        for (int b = 0; b < batch; ++b) {
          for (int id : n.inputs) {
            const Tensor& t = v[static_cast<std::size_t>(id)];
            const std::size_t chunk = static_cast<std::size_t>(t.dim(1)) * plane;
            const auto src = t.data().subspan(static_cast<std::size_t>(b) * chunk, chunk);
            std::copy(src.begin(), src.end(), ys.begin() + static_cast<std::ptrdiff_t>(dst));
            dst += chunk;
          }
        }
        v[i] = y;
        break;
      }
      case IrOp::GlobalAvgPool: v[i] = global_avg_pool(in(0)); break;
      case IrOp::Linear: v[i] = linear(in(0), Tensor(n.weight_shape, n.weights)); break;
    }
  }
  return v;
}

inline Tensor interpret(const GraphIR& g, const Tensor& x) { return interpret_all(g, x).at(static_cast<std::size_t>(g.output)); }

// ---------------------------------------------------------------------------
// Export

struct ExportOptions {
  /// Emit signed activations as MultiThreshold (bias 0) followed by an
  /// integer Add, leaving the sign bias for the absorb pass to fold.
  bool separate_sign_bias = false;
};

/// Lowers a quantized model. Activation quantizers become MultiThreshold
/// (+ Mul by the step); quantized layers become integer Conv/Linear + Mul by
/// the weight scales.
inline GraphIR export_ir(const Model& m, int height, int width, const ExportOptions& opt = {}) {
  if (height < 1 || width < 1) throw std::invalid_argument("export_ir: input size must be positive");
  GraphIR g;
  const auto& layers = m.layers();
  std::vector<int> id(layers.size(), -1);
  auto shape_of = [&](int node) -> const Shape& { return g.nodes[static_cast<std::size_t>(node)].shape; };
  auto push = [&](IrNode n) {
    n.shape = infer_shape(g, n);
    return g.add(std::move(n));
  };
  const auto& net = m.arch().net;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    auto src = [&](std::size_t k) { return id[static_cast<std::size_t>(l.inputs.at(k))]; };
    switch (l.kind) {
      case LayerKind::Input: {
        // a full model reads the image; a lone cell reads its group input
        const int c = m.params().count(kStemParam) ? net.in_channels : net.groups.front().in_channels;
        id[i] = g.add({.name = l.name, .op = IrOp::Input, .shape = {c, height, width}});
        break;
      }
      case LayerKind::ActQuant: {
        const ActGrid grid = act_grid(l.quant);
        IrNode mt{.name = l.name + ".mt", .op = IrOp::MultiThreshold, .inputs = {src(0)}};
        mt.thresholds = grid.thresholds();
        mt.obits = l.quant.bits;
        int cur;
        if (opt.separate_sign_bias && grid.offset != 0.0f) {
          mt.out_bias = 0.0f;
          cur = push(std::move(mt));
          IrNode add{.name = l.name + ".bias", .op = IrOp::Add, .inputs = {cur}};
          add.has_constant = true;
          add.constant = grid.offset;
          cur = push(std::move(add));
        } else {
          mt.out_bias = grid.offset;
          cur = push(std::move(mt));
        }
        IrNode mul{.name = l.name + ".scale", .op = IrOp::Mul, .inputs = {cur}};
        mul.channel_scale = {grid.scale};
        id[i] = push(std::move(mul));
        break;
      }
      case LayerKind::QConv:
      case LayerKind::QLinear: {
        const Tensor& w = m.params().at(l.param);
        const WeightQuant q = compute_weight_quant(w, l.quant);
        IrNode n{.name = l.name, .op = l.kind == LayerKind::QConv ? IrOp::Conv : IrOp::Linear, .inputs = {src(0)}};
        n.weight_shape = w.shape();
        n.weights = q.levels;
        n.wbits = l.quant.bits;
        n.stride = l.kind == LayerKind::QConv ? l.stride : 1;
        const int c = push(std::move(n));
        IrNode mul{.name = l.name + ".scale", .op = IrOp::Mul, .inputs = {c}};
        mul.channel_scale = q.scales;
        id[i] = push(std::move(mul));
        break;
      }
      case LayerKind::MaxPool: {
        IrNode n{.name = l.name, .op = IrOp::MaxPool, .inputs = {src(0)}};
        n.kernel = 3;
        n.stride = l.stride;
        n.pad = 1;
        id[i] = push(std::move(n));
        break;
      }
      case LayerKind::ChannelTile: {
        const int in_c = shape_of(src(0)).at(0);
        if (l.out_channels % in_c != 0) throw UnsupportedOp(l.name);
        IrNode n{.name = l.name, .op = IrOp::Concat, .inputs = std::vector<int>(static_cast<std::size_t>(l.out_channels / in_c), src(0))};
        id[i] = push(std::move(n));
        break;
      }
      case LayerKind::Add: {
        IrNode n{.name = l.name, .op = IrOp::Add};
        for (std::size_t k = 0; k < l.inputs.size(); ++k) n.inputs.push_back(src(k));
        id[i] = push(std::move(n));
        break;
      }
      case LayerKind::GlobalAvgPool: id[i] = push({.name = l.name, .op = IrOp::GlobalAvgPool, .inputs = {src(0)}}); break;
      default: throw UnsupportedOp(l.name);
    }
  }
  g.output = static_cast<int>(g.nodes.size()) - 1;
  validate(g);
  return g;
}

}  // namespace nash
