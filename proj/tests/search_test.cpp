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

#include <algorithm>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "nash/pipeline.hpp"
#include "nash/search.hpp"
#include "suites/variant_soundness.hpp"

using namespace nash;

namespace {

void set_logit(CellGraph& cell, int from, int to, OpKind op, float v) {
  auto& e = cell.edges()[edge_index(from, to)];
  const auto it = std::find(e.candidates.begin(), e.candidates.end(), op);
  ASSERT_NE(it, e.candidates.end());
  e.alpha[static_cast<std::size_t>(it - e.candidates.begin())] = v;
}

SearchConfig tiny_config(Variant v, std::uint64_t seed) {
  SearchConfig c;
  c.variant = v;
  c.seed = seed;
  c.epochs = 1;
  c.batches_per_epoch = 1;
  c.batch_size = 8;
  return c;
}

std::vector<std::vector<float>> snapshot(const std::vector<Tensor>& ts) {
  std::vector<std::vector<float>> out;
  for (const auto& t : ts) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

SearchState make_state(const SearchConfig& cfg) {
  SearchNetwork net(cfg);
  Rng init(7);
  net.init_weights(init);
  return {net, SgdMomentum(net.weight_params(), cfg.lr_w, cfg.momentum), SgdMomentum(net.alpha_params(), cfg.lr_alpha, 0.0f),
          Rng(11)};
}

}  // namespace

TEST(SplitDataset, HalvesAreDisjointAndCoverEverything) {
  Dataset d = synth_dataset(4, 25, 8, 3);
  // tag every sample through its first pixel so the halves can be traced back
  for (std::size_t i = 0; i < d.size(); ++i) d.images[i * d.sample_numel()] = static_cast<float>(i);
  const auto [a, b] = split_dataset(d, 0.5f, 42);
  ASSERT_EQ(a.size(), 50u);
  ASSERT_EQ(b.size(), 50u);
  std::set<int> seen;
  for (const Dataset* part : {&a, &b}) {
    for (std::size_t i = 0; i < part->size(); ++i) {
      const int tag = static_cast<int>(part->images[i * part->sample_numel()]);
      EXPECT_TRUE(seen.insert(tag).second) << "sample " << tag << " appears twice";
      EXPECT_EQ(part->labels[i], d.labels[static_cast<std::size_t>(tag)]);
    }
  }
  EXPECT_EQ(seen.size(), 100u);

  const auto [a2, b2] = split_dataset(d, 0.5f, 42);
  EXPECT_EQ(a.images, a2.images);
  EXPECT_EQ(b.labels, b2.labels);
  const auto [a3, b3] = split_dataset(d, 0.5f, 43);
  EXPECT_NE(a.images, a3.images);
}

TEST(SplitDataset, RejectsDegenerateFractions) {
  const Dataset d = synth_dataset(2, 2, 8, 1);
  EXPECT_THROW(split_dataset(d, 0.0f, 1), std::invalid_argument);
  EXPECT_THROW(split_dataset(d, 1.0f, 1), std::invalid_argument);
  EXPECT_THROW(split_dataset(d, 0.01f, 1), std::invalid_argument);
}

TEST(SearchStep, ZeroWeightRateLeavesWeightsAndMovesLogits) {
  SearchConfig cfg = tiny_config(Variant::v1, 1);
  cfg.lr_w = 0.0f;
  SearchState s = make_state(cfg);
  const Dataset d = synth_dataset(4, 4, 16, 5);
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Batch b = make_batch(d, idx);

  const auto w0 = snapshot(s.net.weight_params());
  const auto a0 = snapshot(s.net.alpha_params());
  for (int k = 0; k < 3; ++k) search_step(s, b, b, k);
  EXPECT_EQ(snapshot(s.net.weight_params()), w0);
  EXPECT_NE(snapshot(s.net.alpha_params()), a0);
}

TEST(SearchStep, ZeroLogitRateLeavesLogitsAndMovesWeights) {
  SearchConfig cfg = tiny_config(Variant::v1, 1);
  cfg.lr_alpha = 0.0f;
  SearchState s = make_state(cfg);
  const Dataset d = synth_dataset(4, 4, 16, 5);
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Batch b = make_batch(d, idx);

  const auto w0 = snapshot(s.net.weight_params());
  const auto a0 = snapshot(s.net.alpha_params());
  for (int k = 0; k < 3; ++k) search_step(s, b, b, k);
  EXPECT_EQ(snapshot(s.net.alpha_params()), a0);
  EXPECT_NE(snapshot(s.net.weight_params()), w0);
}

TEST(SearchStep, WeightsStayTrainableAfterLogitPhase) {
  SearchState s = make_state(tiny_config(Variant::v2, 2));
  const Dataset d = synth_dataset(4, 2, 16, 5);
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Batch b = make_batch(d, idx);
  search_step(s, b, b);
  for (const auto& w : s.net.weight_params()) EXPECT_TRUE(w.requires_grad());
}

TEST(SearchStep, EmptyBatchIsRejected) {
  SearchState s = make_state(tiny_config(Variant::v1, 1));
  EXPECT_THROW(search_step(s, Batch{}, Batch{}), std::invalid_argument);
}

TEST(VariantV1, ShapeChangingPoolBecomesConv1) {
  const GroupSpec g{8, 16, 2};
  DerivedCell d{{{0, OpKind::MaxPool3}, {1, OpKind::MaxPool3}, {0, OpKind::Conv3}, {2, OpKind::Identity}},
                resolve_plan(Variant::v1, {2, 2}),
                g};
  AuditLog log;
  const DerivedCell out = variant_v1(d, &log, 1);
  EXPECT_EQ(out.nodes[0].op, OpKind::Conv1);
  EXPECT_EQ(out.nodes[1].op, OpKind::MaxPool3);  // same shape on (1,2)
  EXPECT_EQ(out.nodes[2].op, OpKind::Conv3);
  ASSERT_EQ(log.size(), 1u);
  EXPECT_EQ(log[0], (AuditEvent{"replace", 1, 0, 1, OpKind::MaxPool3, OpKind::Conv1}));
}

TEST(VariantV1, SameShapeGroupIsUntouched) {
  DerivedCell d{{{0, OpKind::MaxPool3}, {1, OpKind::MaxPool3}, {0, OpKind::MaxPool3}, {0, OpKind::MaxPool3}},
                resolve_plan(Variant::v1, {2, 2}),
                {8, 8, 1}};
  AuditLog log;
  EXPECT_EQ(variant_v1(d, &log).nodes, d.nodes);
  EXPECT_TRUE(log.empty());
}

TEST(VariantV2, StrideTwoEdgeLosesPoolSameShapeEdgeKeepsAll) {
  const GroupSpec g{8, 16, 2};
  AuditLog log;
  const OpMask mask = variant_mask(Variant::v2, g, true, &log, 0);
  EXPECT_EQ(mask[edge_index(0, 1)].size(), 5u);
  EXPECT_EQ(mask[edge_index(1, 2)].size(), 6u);
  EXPECT_EQ(log.size(), 4u);  // the four edges leaving node 0
  for (const auto& e : log) {
    EXPECT_EQ(e.action, "mask");
    EXPECT_EQ(e.from, 0);
  }
  // the cell also drops Identity on a shape-changing edge
  const CellGraph cell(g, mask, resolve_plan(Variant::v2, {2, 2}), QuantConfig{});
  EXPECT_EQ(cell.edges()[edge_index(0, 1)].candidates,
            (std::vector<OpKind>{OpKind::Zero, OpKind::Conv1, OpKind::Conv3, OpKind::Conv5}));
  EXPECT_EQ(cell.edges()[edge_index(1, 2)].candidates.size(), 6u);
}

TEST(VariantV2, CellRemaskKeepsUnchangedLogits) {
  const GroupSpec g{8, 16, 2};
  CellGraph cell(g, full_mask(), resolve_plan(Variant::v2, {2, 2}), QuantConfig{});
  set_logit(cell, 1, 2, OpKind::Conv5, 2.5f);
  set_logit(cell, 0, 1, OpKind::Conv3, 1.5f);
  const CellGraph out = variant_v2_mask(cell);
  EXPECT_EQ(out.probabilities(edge_index(1, 2)), cell.probabilities(edge_index(1, 2)));
  for (float a : out.edges()[edge_index(0, 1)].alpha.data()) EXPECT_EQ(a, 0.0f);
  EXPECT_EQ(out.params().size(), cell.params().size());
}

TEST(VariantV3, FallsThroughRankedListToFirstAcceptable) {
  const GroupSpec g{8, 16, 2};
  CellGraph cell(g, full_mask(), resolve_plan(Variant::v3, {2, 2}), QuantConfig{});
  set_logit(cell, 0, 1, OpKind::MaxPool3, 6.0f);
  set_logit(cell, 0, 1, OpKind::Conv1, 3.0f);
  set_logit(cell, 0, 2, OpKind::MaxPool3, 6.0f);
  set_logit(cell, 1, 2, OpKind::Conv5, 1.0f);
  AuditLog log;
  const DerivedCell d = variant_v3_reject(cell, &log, 0);
  EXPECT_EQ(d.nodes[0].pred, 0);
  EXPECT_EQ(d.nodes[0].op, OpKind::Conv1);
  EXPECT_EQ(d.nodes[1].pred, 1);
  EXPECT_EQ(d.nodes[1].op, OpKind::Conv5);
  // nodes 3 and 4 sit on uniform logits, where the tie rule puts (0, MaxPool3) first
  ASSERT_EQ(log.size(), 4u);
  EXPECT_EQ(log[3].to, 4);
  EXPECT_EQ(log[0], (AuditEvent{"reject", 0, 0, 1, OpKind::MaxPool3, OpKind::Conv1}));
  EXPECT_EQ(log[1], (AuditEvent{"reject", 0, 0, 2, OpKind::MaxPool3, OpKind::Conv5}));
}

TEST(VariantV3, NothingAcceptableIsAnError) {
  const GroupSpec g{8, 16, 2};
  const OpMask mask(kCellEdges, {OpKind::Zero, OpKind::MaxPool3});
  const CellGraph cell(g, mask, resolve_plan(Variant::v3, {2, 2}), QuantConfig{});
  EXPECT_THROW(variant_v3_reject(cell), InvalidState);
}

TEST(VariantV4, FiveOpsAndNoPool) {
  const auto ops = variant_v4_ops();
  EXPECT_EQ(ops.size(), 5u);
  EXPECT_EQ(std::count(ops.begin(), ops.end(), OpKind::MaxPool3), 0);
  const OpMask mask = variant_mask(Variant::v4, {8, 8, 1}, true);
  for (const auto& e : mask) EXPECT_EQ(e.size(), 5u);
  const OpMask no_zero = variant_mask(Variant::v4, {8, 8, 1}, false);
  for (const auto& e : no_zero) EXPECT_EQ(e.size(), 4u);
}

TEST(VariantSoundness, AllVariantsOnFiftyConfigs) {
  for (Variant v : {Variant::v1, Variant::v2, Variant::v3, Variant::v4}) {
    const auto r = suites::run_variant_soundness(v, 50, 99);
    EXPECT_EQ(r.configs, 50);
    EXPECT_TRUE(suites::variant_sound(r)) << to_string(v) << ": " << r.shape_changing_pools << " shape-changing pools, "
                                          << r.any_pools << " pools, " << r.bad_audit_events << " bad events";
  }
}

TEST(RunSearch, TinyRunIsByteIdentical) {
  const Dataset d = synth_dataset(4, 8, 16, 1);
  for (Variant v : {Variant::v1, Variant::v4}) {
    const auto a = dump_json(run_search(tiny_config(v, 3), d));
    const auto b = dump_json(run_search(tiny_config(v, 3), d));
    EXPECT_EQ(a, b);
  }
}

TEST(RunSearch, ResultShapeAndV4AuditHasNoPools) {
  const Dataset d = synth_dataset(4, 8, 16, 1);
  SearchConfig cfg = tiny_config(Variant::v4, 5);
  cfg.epochs = 2;
  const SearchResult r = run_search(cfg, d);
  EXPECT_EQ(r.cells.size(), cfg.net.groups.size());
  EXPECT_EQ(r.val_loss.size(), 2u);
  EXPECT_EQ(r.alpha.size(), 2u);
  EXPECT_EQ(r.alpha[0].size(), 10u * cfg.net.groups.size());
  for (const auto& e : r.audit) EXPECT_NE(e.op, OpKind::MaxPool3);
  for (const auto& c : r.cells) {
    for (const auto& n : c.nodes) EXPECT_NE(n.op, OpKind::MaxPool3);
  }

  const SearchResult back = nlohmann::json(r).get<SearchResult>();
  EXPECT_EQ(back.cells, r.cells);
  EXPECT_EQ(back.audit, r.audit);
}

TEST(RunSearch, GeometryMismatchIsRejected) {
  const Dataset d = synth_dataset(3, 4, 16, 1);
  EXPECT_THROW(run_search(tiny_config(Variant::v1, 1), d), std::invalid_argument);
  SearchConfig orig = tiny_config(Variant::v1, 1);
  orig.variant = Variant::original;
  EXPECT_THROW(run_search(orig, synth_dataset(4, 4, 16, 1)), std::invalid_argument);
}

TEST(RunSearch, ValidationLossFallsOnToyTask) {
  const Dataset d = synth_dataset(4, 32, 8, 8);
  std::vector<double> drops;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SearchConfig cfg = tiny_config(Variant::v2, seed);
    cfg.epochs = 4;
    cfg.batches_per_epoch = 8;
    cfg.batch_size = 16;
    const auto r = run_search(cfg, d);
    drops.push_back(static_cast<double>(r.val_loss.front()) - static_cast<double>(r.val_loss.back()));
  }
  std::nth_element(drops.begin(), drops.begin() + 2, drops.end());
  EXPECT_GT(drops[2], 0.0);
}
