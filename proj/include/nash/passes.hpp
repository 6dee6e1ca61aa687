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
#include <string>
#include <vector>

#include "nash/ir.hpp"

namespace nash {

namespace detail {

/// Drops node `k`; readers of `k` read `replacement` (< k) instead.
inline void remove_node(GraphIR& g, int k, int replacement) {
  g.nodes.erase(g.nodes.begin() + k);
  for (auto& n : g.nodes) {
    for (int& in : n.inputs) {
      if (in == k) in = replacement;
      else if (in > k) --in;
    }
  }
  if (g.output == k) g.output = replacement;
  else if (g.output > k) --g.output;
}

inline bool only_consumer(const GraphIR& g, int producer, int consumer) {
  const auto c = g.consumers(producer);
  return c.size() == 1 && c[0] == consumer && producer != g.output;
}

}  // namespace detail

/// Mul(c) -> MaxPool becomes MaxPool -> Mul(c) when every c >= 0 (max
/// commutes with a non-negative scale) and the Mul feeds only the pool.
inline GraphIR pass_move_mul_past_maxpool(GraphIR g) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (int p = 0; p < static_cast<int>(g.nodes.size()); ++p) {
      IrNode& pool = g.nodes[static_cast<std::size_t>(p)];
      if (pool.op != IrOp::MaxPool) continue;
      const int i = pool.inputs[0];
      IrNode& mul = g.nodes[static_cast<std::size_t>(i)];
      if (mul.op != IrOp::Mul || !detail::only_consumer(g, i, p)) continue;
      if (std::any_of(mul.channel_scale.begin(), mul.channel_scale.end(), [](float c) { return !(c >= 0.0f); })) continue;
      IrNode new_pool = pool;
      IrNode new_mul = mul;
      new_pool.inputs = mul.inputs;
      new_mul.inputs = {i};
      g.nodes[static_cast<std::size_t>(i)] = std::move(new_pool);
      g.nodes[static_cast<std::size_t>(i)].shape = infer_shape(g, g.nodes[static_cast<std::size_t>(i)]);
      g.nodes[static_cast<std::size_t>(p)] = std::move(new_mul);
      g.nodes[static_cast<std::size_t>(p)].shape = g.nodes[static_cast<std::size_t>(i)].shape;
      changed = true;
    }
  }
  return g;
}

/// MultiThreshold -> Add(integer constant b) collapses into the threshold
/// node with out_bias + b, when the Add is the node's only reader.
inline GraphIR pass_absorb_sign_bias(GraphIR g) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (int a = 0; a < static_cast<int>(g.nodes.size()); ++a) {
      const IrNode& add = g.nodes[static_cast<std::size_t>(a)];
      if (add.op != IrOp::Add || !add.has_constant) continue;
      const int m = add.inputs[0];
      IrNode& mt = g.nodes[static_cast<std::size_t>(m)];
      if (mt.op != IrOp::MultiThreshold || std::nearbyint(add.constant) != add.constant) continue;
      const auto readers = g.consumers(m);
      if (readers.size() != 1 || readers[0] != a || m == g.output) continue;
      mt.out_bias += add.constant;
      detail::remove_node(g, a, m);
      changed = true;
      break;
    }
  }
  return g;
}

/// Rewrites every Add with n > 2 inputs into n-1 chained two-input Adds,
/// ((x0 + x1) + x2) + ..., keeping the input order.
inline GraphIR pass_cascade_lowering(const GraphIR& g) {
  GraphIR out;
  std::vector<int> id(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    IrNode n = g.nodes[i];
    for (int& in : n.inputs) in = id[static_cast<std::size_t>(in)];
    if (n.op != IrOp::Add || n.has_constant || n.inputs.size() <= 2) {
      id[i] = out.add(std::move(n));
      continue;
    }
    int acc = n.inputs[0];
    for (std::size_t k = 1; k + 1 < n.inputs.size(); ++k) {
      IrNode step{.name = n.name + "." + std::to_string(k - 1), .op = IrOp::Add, .inputs = {acc, n.inputs[k]}, .shape = n.shape};
      acc = out.add(std::move(step));
    }
    n.inputs = {acc, n.inputs.back()};
    id[i] = out.add(std::move(n));
  }
  out.output = id[static_cast<std::size_t>(g.output)];
  return out;
}

/// Streamline then lower: sign biases into thresholds, scales behind
/// pools, wide sums into cascades.
inline GraphIR lower_for_hardware(const GraphIR& g) {
  return pass_cascade_lowering(pass_move_mul_past_maxpool(pass_absorb_sign_bias(g)));
}

}  // namespace nash
