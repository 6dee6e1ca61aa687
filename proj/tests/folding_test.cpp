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

#include <gtest/gtest.h>

#include "nash/pipeline.hpp"
#include "suites/folding_suite.hpp"

using namespace nash;
using nash::suites::single_conv_graph;

namespace {

ResourceEstimate estimate_model(Variant v, WxAy bits, const FoldTarget& t) {
  const NetworkSpec net;
  Architecture a = original_architecture(net, bits, QuantConfig{});
  if (v != Variant::original) {
    a.variant = v;
    a.plan = resolve_plan(v, bits);
    a.cells.clear();
    for (const auto& g : net.groups) {
      a.cells.emplace_back(DerivedCell{{{0, OpKind::Conv3}, {1, OpKind::Conv1}, {0, OpKind::Conv5}, {2, OpKind::Conv3}}, a.plan, g});
    }
  }
  const auto lg = lower_model(build_final_model(a, 1), 16, 16);
  return estimate_resources(lg.lowered, fold_layers(lg.lowered, t), 100.0);
}

}  // namespace

TEST(LargestDivisor, Examples) {
  EXPECT_EQ(largest_divisor_at_most(64, 16), 16);
  EXPECT_EQ(largest_divisor_at_most(63, 16), 9);
  EXPECT_EQ(largest_divisor_at_most(27, 8), 3);
  EXPECT_EQ(largest_divisor_at_most(13, 12), 1);
  EXPECT_EQ(largest_divisor_at_most(12, 100), 12);
  EXPECT_EQ(largest_divisor_at_most(12, 0), 1);
  EXPECT_THROW(largest_divisor_at_most(0, 4), std::invalid_argument);
}

TEST(FoldLayers, CapsPickLargestDivisors) {
  FoldTarget t;
  t.cap_pe = 16;
  t.cap_simd = 8;
  const auto f = fold_layers(single_conv_graph(63, 3, 3, 8), t);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].mh, 63);
  EXPECT_EQ(f[0].mw, 27);
  EXPECT_EQ(f[0].pe, 9);
  EXPECT_EQ(f[0].simd, 3);
}

TEST(FoldLayers, BudgetBoundsProduct) {
  FoldTarget t;
  t.mode = FoldMode::budget;
  t.budget = 48;
  const auto f = fold_layers(single_conv_graph(64, 16, 3, 8), t).at(0);
  EXPECT_EQ(f.pe, 32);
  EXPECT_EQ(f.simd, 1);
  EXPECT_LE(f.pe * f.simd, 48);
  EXPECT_EQ(144 % f.simd, 0);
  t.budget = 0;
  EXPECT_THROW(fold_layers(single_conv_graph(4, 1, 1, 4), t), std::invalid_argument);
}

TEST(FoldLayers, NonMatrixNodesAreSkipped) {
  GraphIR g = single_conv_graph(4, 2, 3, 4);
  g.output = g.add({.name = "pool", .op = IrOp::MaxPool, .inputs = {1}, .shape = {4, 4, 4}, .stride = 1, .kernel = 3, .pad = 1});
  EXPECT_EQ(fold_layers(g, {}).size(), 1u);
}

TEST(MvtuCycles, HandExample) {
  EXPECT_EQ(mvtu_cycles(8, 8, 4, 9, 2, 3), 384u);
  EXPECT_EQ(mvtu_cycles(8, 8, 4, 9, 4, 9), 64u);  // fully unfolded
  EXPECT_EQ(mvtu_cycles(8, 8, 4, 9, 1, 3), 2 * mvtu_cycles(8, 8, 4, 9, 2, 3));
  EXPECT_THROW(mvtu_cycles(8, 8, 4, 9, 3, 3), std::invalid_argument);
}

TEST(MvtuBram, DepthAndWidthRoundUp) {
  // depth 4*18 = 72 words, width 32*2 = 64 bits
  EXPECT_EQ(mvtu_bram(64, 576, 16, 32, 2), 16u * 2u * 1u);
  // depth 2048 words, width 1 bit
  EXPECT_EQ(mvtu_bram(64, 64, 2, 1, 1), 2u * 1u * 2u);
}

TEST(MvtuLut, DocumentedConstants) {
  const LutModel k;
  EXPECT_DOUBLE_EQ(mvtu_lut(2, 3, 2, 2, 3, 2, k), 0.35 * 2 * 3 * 2 * 2 + 0.08 * 2 * 3 * 2);
  EXPECT_DOUBLE_EQ(mvtu_lut(2, 3, 2, 2, 0, 0, k), 0.35 * 24);
}

TEST(EstimateResources, TotalsAreSumsAndThroughputUsesBottleneck) {
  const auto r = estimate_model(Variant::v1, {2, 2}, {});
  std::uint64_t cycles = 0, bram = 0, max_cycles = 0;
  double lut = 0.0;
  for (const auto& l : r.layers) {
    cycles += l.cycles;
    bram += l.bram;
    lut += l.lut;
    max_cycles = std::max(max_cycles, l.cycles);
  }
  EXPECT_EQ(r.total_cycles, cycles);
  EXPECT_EQ(r.bram, bram);
  EXPECT_NEAR(r.lut, lut, 1e-9 * lut);
  EXPECT_EQ(r.max_cycles, max_cycles);
  EXPECT_DOUBLE_EQ(r.latency_ms, static_cast<double>(cycles) / 1e5);
  EXPECT_DOUBLE_EQ(r.throughput_fps, 1e8 / static_cast<double>(max_cycles));
}

TEST(EstimateResources, SingleConvByHand) {
  const GraphIR g = single_conv_graph(4, 1, 3, 8);
  FoldingConfig f{{1, "conv", 4, 9, 2, 3}};
  const auto r = estimate_resources(g, f, 200.0);
  EXPECT_EQ(r.total_cycles, 384u);
  EXPECT_DOUBLE_EQ(r.latency_ms, 384.0 / 200e3);
  EXPECT_EQ(r.layers[1].bram, 2u);
  f[0].mw = 8;
  EXPECT_THROW(estimate_resources(g, f, 200.0), std::invalid_argument);
  EXPECT_THROW(estimate_resources(g, {}, 200.0), std::invalid_argument);
  EXPECT_THROW(estimate_resources(g, fold_layers(g, {}), 0.0), std::invalid_argument);
}

TEST(EstimateResources, SharedBottleneckGivesEqualThroughput) {
  // the 32x288 conv on 16x16 dominates; the trailing layers differ
  FoldTarget t;
  t.cap_pe = 4;
  t.cap_simd = 4;
  GraphIR a = single_conv_graph(32, 32, 3, 16);
  GraphIR b = a;
  IrNode small{.name = "tail", .op = IrOp::Conv, .inputs = {1}};
  small.weight_shape = {8, 32, 1, 1};
  small.weights.assign(numel(small.weight_shape), 1.0f);
  small.wbits = 2;
  small.shape = infer_shape(b, small);
  b.output = b.add(small);
  const auto ra = estimate_resources(a, fold_layers(a, t), 100.0);
  const auto rb = estimate_resources(b, fold_layers(b, t), 100.0);
  EXPECT_EQ(ra.throughput_fps, rb.throughput_fps);
  EXPECT_GT(rb.latency_ms, ra.latency_ms);
}

TEST(EstimateResources, BranchLayersNeverLowerLatency) {
  for (WxAy bits : {WxAy{1, 1}, WxAy{2, 2}}) {
    for (int cap : {4, 16, 64}) {
      FoldTarget t;
      t.cap_pe = cap;
      t.cap_simd = cap;
      const auto base = estimate_model(Variant::original, bits, t);
      for (Variant v : {Variant::v1, Variant::v2, Variant::v3, Variant::v4}) {
        const auto r = estimate_model(v, bits, t);
        EXPECT_GE(r.latency_ms, base.latency_ms) << to_string(v) << " cap " << cap;
        EXPECT_GE(r.bram, base.bram);
      }
    }
  }
}

TEST(EstimateResources, JsonCarriesTotals) {
  const auto r = estimate_model(Variant::original, {2, 2}, {});
  const nlohmann::json j = r;
  EXPECT_EQ(j.at("schema"), "nash.estimate");
  EXPECT_EQ(j.at("total_cycles").get<std::uint64_t>(), r.total_cycles);
  EXPECT_EQ(j.at("layers").size(), r.layers.size());
}

TEST(FoldingSuite, TwoHundredRandomLayers) {
  const auto r = suites::run_folding_suite(200, 20, 5);
  EXPECT_TRUE(suites::folding_sound(r)) << r.divisibility_failures << " divisibility, " << r.cap_failures << " cap, "
                                        << r.maximality_failures << " maximality, " << r.oracle_mismatches << " oracle";
}
