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

#include <vector>

#include <gtest/gtest.h>

#include "nash/pipeline.hpp"
#include "suites/gradient_suite.hpp"
#include "suites/pass_equivalence.hpp"

using namespace nash;

namespace {

int node_named(const GraphIR& g, const std::string& name) {
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (g.nodes[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

Model sample_model(Variant v, WxAy bits, std::uint64_t seed) {
  const NetworkSpec net;
  Architecture a = original_architecture(net, bits, QuantConfig{});
  if (v != Variant::original) {
    a.variant = v;
    a.plan = resolve_plan(v, bits);
    a.cells.clear();
    const OpKind second = v == Variant::v4 ? OpKind::Identity : OpKind::MaxPool3;
    for (const auto& g : net.groups) {
      a.cells.emplace_back(DerivedCell{{{0, OpKind::Conv3}, {1, second}, {0, OpKind::Conv1}, {2, OpKind::Conv5}}, a.plan, g});
    }
  }
  return build_final_model(a, seed);
}

Tensor images(int n, std::uint64_t seed) {
  const Dataset d = synth_dataset(4, (n + 3) / 4, 16, seed);
  std::vector<std::size_t> idx;
  for (int i = 0; i < n; ++i) idx.push_back(static_cast<std::size_t>(i));
  return d.batch(idx).first;
}

/// in -> Mul(c) -> MaxPool(3, 1, 1)
GraphIR mul_pool_graph(std::vector<float> c) {
  GraphIR g;
  const int in = g.add({.name = "in", .op = IrOp::Input, .shape = {2, 4, 4}});
  const int m = g.add({.name = "mul", .op = IrOp::Mul, .inputs = {in}, .shape = {2, 4, 4}, .channel_scale = std::move(c)});
  g.output = g.add({.name = "pool", .op = IrOp::MaxPool, .inputs = {m}, .shape = {2, 4, 4}, .stride = 1, .kernel = 3, .pad = 1});
  return g;
}

/// in -> MultiThreshold(bias) -> Add(b)
GraphIR threshold_add_graph(float bias, float b) {
  GraphIR g;
  const int in = g.add({.name = "in", .op = IrOp::Input, .shape = {1, 3, 3}});
  IrNode mt{.name = "mt", .op = IrOp::MultiThreshold, .inputs = {in}, .shape = {1, 3, 3}};
  mt.thresholds = {-0.5f, 0.5f, 1.5f};
  mt.out_bias = bias;
  mt.obits = 8;
  const int m = g.add(mt);
  IrNode add{.name = "add", .op = IrOp::Add, .inputs = {m}, .shape = {1, 3, 3}};
  add.has_constant = true;
  add.constant = b;
  g.output = g.add(add);
  return g;
}

GraphIR wide_add_graph(int n) {
  GraphIR g;
  const int in = g.add({.name = "in", .op = IrOp::Input, .shape = {1, 2, 2}});
  IrNode add{.name = "sum", .op = IrOp::Add, .shape = {1, 2, 2}};
  for (int k = 0; k < n; ++k) {
    add.inputs.push_back(g.add({.name = "m" + std::to_string(k), .op = IrOp::Mul, .inputs = {in}, .shape = {1, 2, 2},
                                .channel_scale = {static_cast<float>(k + 1)}}));
  }
  g.output = g.add(add);
  return g;
}

}  // namespace

TEST(ActGrid, ReluTwoBitHasThreeThresholds) {
  const ActGrid grid = act_grid(QuantSpec::relu(2, 1.5f));
  const auto t = grid.thresholds();
  ASSERT_EQ(t.size(), 3u);
  EXPECT_FLOAT_EQ(t[0], 0.25f);
  EXPECT_FLOAT_EQ(t[1], 0.75f);
  EXPECT_FLOAT_EQ(t[2], 1.25f);
  EXPECT_EQ(grid.offset, 0.0f);
  EXPECT_FLOAT_EQ(grid.scale, 0.5f);
}

TEST(ActGrid, SignedEightBitHas255ThresholdsAndNegativeBias) {
  const ActGrid grid = act_grid(QuantSpec::identity(8, 4.0f));
  EXPECT_EQ(grid.thresholds().size(), 255u);
  EXPECT_EQ(grid.offset, -128.0f);
}

TEST(ExportIr, MatchesModelForward) {
  for (Variant v : {Variant::original, Variant::v1, Variant::v4}) {
    for (WxAy bits : {WxAy{1, 1}, WxAy{2, 2}}) {
      const Model m = sample_model(v, bits, 3);
      const Tensor x = images(6, 1);
      const Tensor ref = m.forward(x);
      const GraphIR g = export_ir(m, 16, 16);
      EXPECT_LT(max_abs_diff(interpret(g, x), ref), 1e-4f) << to_string(v) << " " << to_string(bits);
      const auto lg = lower_model(m, 16, 16);
      EXPECT_LT(max_abs_diff(interpret(lg.exported, x), ref), 1e-4f);
      EXPECT_LT(max_abs_diff(interpret(lg.lowered, x), ref), 1e-4f);
    }
  }
}

TEST(ExportIr, ThresholdNodesCarryGridAndBias) {
  const Model m = sample_model(Variant::v1, {2, 2}, 1);
  const GraphIR g = export_ir(m, 16, 16);
  int mts = 0;
  for (const auto& n : g.nodes) {
    if (n.op != IrOp::MultiThreshold) continue;
    ++mts;
    EXPECT_EQ(n.thresholds.size(), (std::size_t{1} << n.obits) - 1) << n.name;
    EXPECT_TRUE(n.out_bias == 0.0f || n.out_bias == -static_cast<float>(1 << (n.obits - 1))) << n.name;
  }
  EXPECT_GT(mts, 0);
  EXPECT_EQ(g.count(IrOp::Input), 1u);
  EXPECT_EQ(g.nodes[static_cast<std::size_t>(g.output)].shape, (Shape{4}));
}

TEST(ExportIr, SeparateSignBiasIsAbsorbedBack) {
  const Model m = sample_model(Variant::v2, {2, 2}, 4);
  const GraphIR plain = export_ir(m, 16, 16);
  const GraphIR split = export_ir(m, 16, 16, {.separate_sign_bias = true});
  EXPECT_GT(split.nodes.size(), plain.nodes.size());
  EXPECT_EQ(pass_absorb_sign_bias(split), plain);
}

TEST(ExportIr, JsonRoundTrip) {
  const GraphIR g = export_ir(sample_model(Variant::v3, {1, 1}, 2), 16, 16);
  const GraphIR back = nlohmann::json(g).get<GraphIR>();
  EXPECT_EQ(back, g);
}

TEST(ExportIr, MalformedDocumentsAreFormatErrors) {
  nlohmann::json j = export_ir(sample_model(Variant::original, {2, 2}, 2), 16, 16);
  nlohmann::json bad_schema = j;
  bad_schema["schema"] = "other";
  EXPECT_THROW(bad_schema.get<GraphIR>(), FormatError);
  nlohmann::json bad_edge = j;
  bad_edge["nodes"][1]["inputs"] = {5};
  EXPECT_THROW(bad_edge.get<GraphIR>(), FormatError);
  nlohmann::json bad_shape = j;
  bad_shape["nodes"][2]["shape"] = {1, 1, 1};
  EXPECT_THROW(bad_shape.get<GraphIR>(), FormatError);
  nlohmann::json missing = j;
  missing.erase("nodes");
  EXPECT_THROW(missing.get<GraphIR>(), FormatError);
}

TEST(MoveMulPastMaxPool, NonNegativeScaleSwapsAndIsEquivalent) {
  const GraphIR g = mul_pool_graph({0.5f});
  const GraphIR out = pass_move_mul_past_maxpool(g);
  EXPECT_EQ(out.nodes[1].op, IrOp::MaxPool);
  EXPECT_EQ(out.nodes[2].op, IrOp::Mul);
  EXPECT_EQ(out.output, 2);
  Rng rng(3);
  const Tensor x = suites::random_tensor({3, 2, 4, 4}, rng);
  EXPECT_EQ(max_abs_diff(interpret(out, x), interpret(g, x)), 0.0f);
  EXPECT_EQ(pass_move_mul_past_maxpool(out), out);
}

TEST(MoveMulPastMaxPool, NegativeScaleIsLeftAlone) {
  const GraphIR g = mul_pool_graph({-1.0f});
  EXPECT_EQ(pass_move_mul_past_maxpool(g), g);
  const GraphIR mixed = mul_pool_graph({0.5f, -0.5f});
  EXPECT_EQ(pass_move_mul_past_maxpool(mixed), mixed);
}

TEST(MoveMulPastMaxPool, SharedMulIsLeftAlone) {
  GraphIR g = mul_pool_graph({2.0f});
  g.output = g.add({.name = "side", .op = IrOp::Add, .inputs = {1, 2}, .shape = {2, 4, 4}});
  EXPECT_EQ(pass_move_mul_past_maxpool(g), g);
}

TEST(AbsorbSignBias, BiasCancelsToZero) {
  const GraphIR g = threshold_add_graph(-128.0f, 128.0f);
  const GraphIR out = pass_absorb_sign_bias(g);
  ASSERT_EQ(out.nodes.size(), 2u);
  EXPECT_EQ(out.nodes[1].op, IrOp::MultiThreshold);
  EXPECT_EQ(out.nodes[1].out_bias, 0.0f);
  EXPECT_EQ(out.output, 1);
  Rng rng(4);
  const Tensor x = suites::random_tensor({2, 1, 3, 3}, rng, 2.0);
  EXPECT_EQ(max_abs_diff(interpret(out, x), interpret(g, x)), 0.0f);
  EXPECT_EQ(pass_absorb_sign_bias(out), out);
}

TEST(AbsorbSignBias, ZeroConstantKeepsBias) {
  const GraphIR out = pass_absorb_sign_bias(threshold_add_graph(-4.0f, 0.0f));
  ASSERT_EQ(out.nodes.size(), 2u);
  EXPECT_EQ(out.nodes[1].out_bias, -4.0f);
}

TEST(AbsorbSignBias, FractionalConstantIsLeftAlone) {
  const GraphIR g = threshold_add_graph(0.0f, 0.5f);
  EXPECT_EQ(pass_absorb_sign_bias(g), g);
}

TEST(CascadeLowering, FourInputsBecomeThreeChainedAdds) {
  const GraphIR g = wide_add_graph(4);
  const GraphIR out = pass_cascade_lowering(g);
  EXPECT_EQ(out.count(IrOp::Add), 3u);
  for (const auto& n : out.nodes) {
    if (n.op == IrOp::Add) {
      EXPECT_EQ(n.inputs.size(), 2u);
    }
  }
  // ((m0 + m1) + m2) + m3
  const int a0 = node_named(out, "sum.0"), a1 = node_named(out, "sum.1"), last = node_named(out, "sum");
  ASSERT_GE(a0, 0);
  ASSERT_GE(a1, 0);
  EXPECT_EQ(out.nodes[static_cast<std::size_t>(a0)].inputs, (std::vector<int>{1, 2}));
  EXPECT_EQ(out.nodes[static_cast<std::size_t>(a1)].inputs, (std::vector<int>{a0, 3}));
  EXPECT_EQ(out.nodes[static_cast<std::size_t>(last)].inputs, (std::vector<int>{a1, 4}));
  EXPECT_EQ(out.output, last);
  validate(out);
  Rng rng(5);
  const Tensor x = suites::random_tensor({2, 1, 2, 2}, rng);
  EXPECT_EQ(max_abs_diff(interpret(out, x), interpret(g, x)), 0.0f);
  EXPECT_EQ(pass_cascade_lowering(out), out);
}

TEST(CascadeLowering, TwoInputAddIsUnchanged) {
  const GraphIR g = wide_add_graph(2);
  EXPECT_EQ(pass_cascade_lowering(g), g);
}

TEST(PassEquivalence, FortyRandomGraphs) {
  for (const auto& r : suites::run_pass_equivalence(40, 17)) {
    EXPECT_TRUE(suites::pass_sound(r)) << r.name << ": rewritten " << r.rewritten << "/" << r.graphs << ", mismatches "
                                       << r.mismatches << ", not fixed " << r.not_fixed_point << ", invalid " << r.invalid;
    EXPECT_LT(r.worst, 1e-5);
  }
}
