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
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nash/ir.hpp"

namespace nash {

/// Largest divisor of n that does not exceed cap (1 when cap < 1).
inline int largest_divisor_at_most(int n, int cap) {
  if (n < 1) throw std::invalid_argument("largest_divisor_at_most: n must be positive");
  for (int d = std::min(n, cap); d > 1; --d) {
    if (n % d == 0) return d;
  }
  return 1;
}

enum class FoldMode { max_parallel, budget };

NLOHMANN_JSON_SERIALIZE_ENUM(FoldMode, {{FoldMode::max_parallel, "max_parallel"}, {FoldMode::budget, "budget"}})

struct FoldTarget {
  FoldMode mode = FoldMode::max_parallel;
  int cap_pe = 64;
  int cap_simd = 64;
  int budget = 0;  // PE*SIMD ceiling in budget mode
};

/// Folding of one matrix-vector-threshold unit: an MH x MW weight matrix
/// processed PE rows and SIMD columns at a time.
struct LayerFold {
  int node = 0;
  std::string name;
  int mh = 0;
  int mw = 0;
  int pe = 1;
  int simd = 1;
};

inline void to_json(nlohmann::json& j, const LayerFold& f) {
  j = {{"node", f.node}, {"name", f.name}, {"mh", f.mh}, {"mw", f.mw}, {"pe", f.pe}, {"simd", f.simd}};
}
inline void from_json(const nlohmann::json& j, LayerFold& f) {
  j.at("node").get_to(f.node);
  j.at("name").get_to(f.name);
  j.at("mh").get_to(f.mh);
  j.at("mw").get_to(f.mw);
  j.at("pe").get_to(f.pe);
  j.at("simd").get_to(f.simd);
}

using FoldingConfig = std::vector<LayerFold>;

inline bool is_mvtu(const IrNode& n) { return n.op == IrOp::Conv || n.op == IrOp::Linear; }

/// Matrix height (output neurons) and width (synapses per neuron).
inline std::pair<int, int> matrix_dims(const IrNode& n) {
  if (n.op == IrOp::Conv) return {n.weight_shape[0], n.weight_shape[1] * n.weight_shape[2] * n.weight_shape[3]};
  if (n.op == IrOp::Linear) return {n.weight_shape[0], n.weight_shape[1]};
  throw std::invalid_argument("node '" + n.name + "' is not a matrix layer");
}

inline FoldingConfig fold_layers(const GraphIR& g, const FoldTarget& t) {
  if (t.cap_pe < 1 || t.cap_simd < 1) throw std::invalid_argument("folding caps must be >= 1");
  if (t.mode == FoldMode::budget && t.budget < 1) throw std::invalid_argument("folding budget must be >= 1");
  FoldingConfig out;
  for (int i = 0; i < static_cast<int>(g.nodes.size()); ++i) {
    const IrNode& n = g.nodes[static_cast<std::size_t>(i)];
    if (!is_mvtu(n)) continue;
    const auto [mh, mw] = matrix_dims(n);
    LayerFold f{i, n.name, mh, mw, largest_divisor_at_most(mh, t.cap_pe), 1};
    int simd_cap = t.cap_simd;
    if (t.mode == FoldMode::budget) {
      while (f.pe > 1 && t.budget / f.pe < 1) f.pe = largest_divisor_at_most(mh, f.pe - 1);
      simd_cap = std::min(simd_cap, t.budget / f.pe);
    }
    f.simd = largest_divisor_at_most(mw, simd_cap);
    out.push_back(std::move(f));
  }
  return out;
}

/// Cycles per frame of a folded layer producing an ofm_h x ofm_w map.
inline std::uint64_t mvtu_cycles(int ofm_h, int ofm_w, int mh, int mw, int pe, int simd) {
  if (pe < 1 || simd < 1 || mh % pe != 0 || mw % simd != 0) throw std::invalid_argument("invalid folding");
  return static_cast<std::uint64_t>(ofm_h) * static_cast<std::uint64_t>(ofm_w) * static_cast<std::uint64_t>(mh / pe) *
         static_cast<std::uint64_t>(mw / simd);
}

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

/// Weight memory in 36-bit wide, 1024-deep block RAMs: each PE lane stores
/// (MH/PE)*(MW/SIMD) words of SIMD*wbits bits.
inline std::uint64_t mvtu_bram(int mh, int mw, int pe, int simd, int wbits) {
  const std::uint64_t depth = static_cast<std::uint64_t>(mh / pe) * static_cast<std::uint64_t>(mw / simd);
  const std::uint64_t width = static_cast<std::uint64_t>(simd) * static_cast<std::uint64_t>(wbits);
  return static_cast<std::uint64_t>(pe) * ceil_div(width, 36) * ceil_div(depth, 1024);
}

struct LutModel {
  double k_mac = 0.35;        // per PE*SIMD*wbits*abits
  double k_threshold = 0.08;  // per PE*threshold*obit
};

inline double mvtu_lut(int pe, int simd, int wbits, int abits, int thresholds, int obits, const LutModel& k) {
  return k.k_mac * pe * simd * wbits * abits + k.k_threshold * pe * thresholds * obits;
}

struct LayerEstimate {
  std::string name;
  IrOp op = IrOp::Input;
  std::uint64_t cycles = 0;
  std::uint64_t bram = 0;
  double lut = 0.0;
};

struct ResourceEstimate {
  std::vector<LayerEstimate> layers;
  std::uint64_t total_cycles = 0;
  std::uint64_t max_cycles = 0;
  std::uint64_t bram = 0;
  double lut = 0.0;
  double clock_mhz = 100.0;
  double latency_ms = 0.0;
  double throughput_fps = 0.0;
};

inline void to_json(nlohmann::json& j, const LayerEstimate& e) {
  j = {{"name", e.name}, {"op", e.op}, {"cycles", e.cycles}, {"bram", e.bram}, {"lut", e.lut}};
}
inline void to_json(nlohmann::json& j, const ResourceEstimate& r) {
  j = {{"schema", "nash.estimate"}, {"version", 1},
       {"clock_mhz", r.clock_mhz},  {"total_cycles", r.total_cycles},
       {"max_cycles", r.max_cycles}, {"bram", r.bram},
       {"lut", r.lut},              {"latency_ms", r.latency_ms},
       {"throughput_fps", r.throughput_fps}, {"layers", r.layers}};
}

namespace detail {

/// Precision of the activations entering node `i`: the nearest upstream
/// MultiThreshold through scale, pool, concat and constant-add nodes.
inline int input_bits(const GraphIR& g, int i) {
  int cur = g.nodes[static_cast<std::size_t>(i)].inputs.at(0);
  for (;;) {
    const IrNode& n = g.nodes[static_cast<std::size_t>(cur)];
    if (n.op == IrOp::MultiThreshold) return n.obits;
    const bool pass_through = n.op == IrOp::Mul || n.op == IrOp::MaxPool || n.op == IrOp::Concat ||
                              n.op == IrOp::GlobalAvgPool || (n.op == IrOp::Add && n.has_constant);
    if (!pass_through) return 8;
    cur = n.inputs.at(0);
  }
}

/// Thresholding fused behind node `i`: MVTU -> Mul -> MultiThreshold.
inline const IrNode* fused_threshold(const GraphIR& g, int i) {
  const auto c = g.consumers(i);
  if (c.size() != 1) return nullptr;
  const IrNode& mul = g.nodes[static_cast<std::size_t>(c[0])];
  if (mul.op != IrOp::Mul) return nullptr;
  const auto c2 = g.consumers(c[0]);
  if (c2.size() != 1) return nullptr;
  const IrNode& mt = g.nodes[static_cast<std::size_t>(c2[0])];
  return mt.op == IrOp::MultiThreshold ? &mt : nullptr;
}

}  // namespace detail

/// Per-frame cost model. Matrix layers follow their folding; every other
/// node except the input streams one output element per cycle and needs no
/// block RAM.
inline ResourceEstimate estimate_resources(const GraphIR& g, const FoldingConfig& folding, double clock_mhz,
                                           const LutModel& k = {}) {
  if (!(clock_mhz > 0.0)) throw std::invalid_argument("clock must be positive");
  ResourceEstimate r;
  r.clock_mhz = clock_mhz;
  for (int i = 0; i < static_cast<int>(g.nodes.size()); ++i) {
    const IrNode& n = g.nodes[static_cast<std::size_t>(i)];
    LayerEstimate e{n.name, n.op, 0, 0, 0.0};
    if (is_mvtu(n)) {
      auto it = std::find_if(folding.begin(), folding.end(), [i](const LayerFold& f) { return f.node == i; });
      if (it == folding.end()) throw std::invalid_argument("no folding for layer '" + n.name + "'");
      const auto [mh, mw] = matrix_dims(n);
      if (it->mh != mh || it->mw != mw) throw std::invalid_argument("folding for '" + n.name + "' has stale dimensions");
      const int oh = n.op == IrOp::Conv ? n.shape[1] : 1;
      const int ow = n.op == IrOp::Conv ? n.shape[2] : 1;
      e.cycles = mvtu_cycles(oh, ow, mh, mw, it->pe, it->simd);
      e.bram = mvtu_bram(mh, mw, it->pe, it->simd, n.wbits);
      const IrNode* mt = detail::fused_threshold(g, i);
      e.lut = mvtu_lut(it->pe, it->simd, n.wbits, detail::input_bits(g, i), mt ? static_cast<int>(mt->thresholds.size()) : 0,
                       mt ? mt->obits : 0, k);
    } else if (n.op != IrOp::Input) {
      e.cycles = numel(n.shape);
    }
    r.total_cycles += e.cycles;
    r.max_cycles = std::max(r.max_cycles, e.cycles);
    r.bram += e.bram;
    r.lut += e.lut;
    r.layers.push_back(std::move(e));
  }
  r.latency_ms = static_cast<double>(r.total_cycles) / (clock_mhz * 1e3);
  r.throughput_fps = r.max_cycles ? clock_mhz * 1e6 / static_cast<double>(r.max_cycles) : 0.0;
  return r;
}

}  // namespace nash
