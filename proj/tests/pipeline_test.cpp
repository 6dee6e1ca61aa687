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

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "nash/pipeline.hpp"

using namespace nash;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "nash_pipeline_test" / name;
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read(const fs::path& p) { return json::parse(slurp(p)); }

// One stride-1 group on 8x8 synthetic images.
RunConfig smoke_config(Variant v, const fs::path& out) {
  RunConfig c;
  c.variant = v;
  c.net.groups = {{8, 8, 1}};
  c.data.n_per_class = 12;
  c.data.test_per_class = 8;
  c.data.hw = 8;
  c.search.epochs = 1;
  c.search.batches_per_epoch = 4;
  c.search.batch_size = 8;
  c.train.epochs = 3;
  c.train.batch_size = 8;
  c.output_dir = out.string();
  return c;
}

}  // namespace

TEST(RunPipeline, SmokeConfigFinishesWithEveryArtifact) {
  const auto dir = temp_dir("smoke");
  const auto t0 = std::chrono::steady_clock::now();
  const RunSummary r = run_pipeline(smoke_config(Variant::v2, dir));
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 60.0);

  EXPECT_EQ(r.manifest.at("status"), "ok");
  EXPECT_EQ(r.manifest.at("label"), "v2_w2a2_s1");
  EXPECT_EQ(r.manifest.at("point").get<ParetoPoint>(), r.point);
  EXPECT_EQ(read(dir / "manifest.json"), r.manifest);
  EXPECT_GE(r.accuracy.top5, r.accuracy.top1);
  EXPECT_EQ(r.point.error_pct, error_pct(r.accuracy.top1));

  for (const char* f : {"search.json", "arch.json", "eval.json", "model.ir.json", "model.lowered.ir.json", "folding.json",
                        "estimate.json", "point.json", "checkpoint/arch.json"}) {
    ASSERT_TRUE(fs::exists(dir / f)) << f;
    const json j = read(dir / f);
    EXPECT_TRUE(j.contains("schema") && j.contains("version")) << f;
  }
  const json cfg = read(dir / "config.json");
  EXPECT_FALSE(cfg.contains("output_dir"));
  EXPECT_EQ(config_hash(parse_run_config(cfg)), r.manifest.at("config_hash"));

  // every recorded artifact hash matches the file on disk
  for (const auto& st : r.manifest.at("stages")) {
    for (const auto& [name, v] : st.at("artifacts").items()) {
      if (v.is_string()) {
        EXPECT_EQ(file_hash(dir / name), v.get<std::string>()) << name;
      }
    }
  }
  const std::string metrics = slurp(dir / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "epoch,loss,top1,top5");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 4);
}

TEST(RunPipeline, RerunGivesIdenticalManifest) {
  const auto a = temp_dir("rerun_a"), b = temp_dir("rerun_b");
  run_pipeline(smoke_config(Variant::v3, a));
  run_pipeline(smoke_config(Variant::v3, b));
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  EXPECT_EQ(slurp(a / "checkpoint" / "weights.bin"), slurp(b / "checkpoint" / "weights.bin"));

  RunConfig other = smoke_config(Variant::v3, temp_dir("rerun_c"));
  other.seed = 2;
  run_pipeline(other);
  EXPECT_NE(read(a / "manifest.json").at("config_hash"), read(fs::path(other.output_dir) / "manifest.json").at("config_hash"));
}

TEST(RunPipeline, OriginalSkipsTheSearchStage) {
  const auto dir = temp_dir("original");
  const RunSummary r = run_pipeline(smoke_config(Variant::original, dir));
  EXPECT_FALSE(fs::exists(dir / "search.json"));
  for (const auto& st : r.manifest.at("stages")) EXPECT_NE(st.at("stage"), "search");
  EXPECT_EQ(r.point.variant, "original");
}

TEST(RunPipeline, FailureIsRecordedInTheManifest) {
  const auto dir = temp_dir("failed");
  RunConfig c = smoke_config(Variant::v1, dir);
  c.net.classes = 10;
  c.data.source = DataSource::cifar10;
  c.data.path = (dir / "no-such-dir").string();
  EXPECT_THROW(run_pipeline(c), FormatError);
  const json man = read(dir / "manifest.json");
  EXPECT_EQ(man.at("status"), "failed");
  EXPECT_EQ(man.at("failed_stage"), "data");
  EXPECT_FALSE(man.contains("point"));
  EXPECT_EQ(man.at("stages").size(), 1u);  // config only
}

TEST(TrainedBundle, ReloadsAndLowersToTheSameGraph) {
  const auto dir = temp_dir("bundle");
  run_pipeline(smoke_config(Variant::v4, dir));
  const TrainedBundle b = load_trained(dir / "checkpoint");
  EXPECT_EQ(b.height, 8);
  EXPECT_EQ(b.width, 8);
  EXPECT_EQ(dump_json(lower_model(b.model, b.height, b.width).lowered), slurp(dir / "model.lowered.ir.json"));
  EXPECT_THROW(load_trained(dir / "missing"), FormatError);
}

TEST(RunGrid, VariantsTimesBitsGiveOneDirectoryEach) {
  GridConfig g;
  g.base = smoke_config(Variant::v1, "unused");
  g.variants = {Variant::v1, Variant::v2, Variant::v3, Variant::v4};
  g.seeds = {1};
  g.output_dir = temp_dir("grid").string();
  int seen = 0;
  const GridSummary s = run_grid(g, [&](const RunSummary&) { ++seen; });
  EXPECT_EQ(seen, 8);
  ASSERT_EQ(s.runs.size(), 8u);
  const fs::path out = g.output_dir;
  for (const auto& r : s.runs) EXPECT_EQ(r.dir.parent_path(), out);
  EXPECT_EQ(load_csv(out / "points.csv"), s.points);
  for (const char* k : {"bram", "lut"}) {
    const auto front = load_csv(out / (std::string("front_") + k + ".csv"));
    EXPECT_EQ(front, pareto_front(s.points, parse_resource_key(k)));
    EXPECT_TRUE(fs::exists(out / (std::string("front_") + k + ".svg")));
  }
  const json idx = read(out / "grid.json").at("runs");
  ASSERT_EQ(idx.size(), 8u);
  EXPECT_EQ(idx[0].at("manifest"), file_hash(s.runs[0].dir / "manifest.json"));
}

TEST(ParseGridConfig, StrictAndRoundTrips) {
  const json j = json::parse(R"({"schema": "nash.grid", "version": 1, "variants": ["original", "v4"],
                                 "bits": ["w1a1"], "seeds": [3, 4], "base": {"train": {"epochs": 2}}})");
  const GridConfig g = parse_grid_config(j);
  EXPECT_EQ(g.variants, (std::vector<Variant>{Variant::original, Variant::v4}));
  EXPECT_EQ(g.bits, (std::vector<WxAy>{{1, 1}}));
  EXPECT_EQ(g.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(g.base.train.epochs, 2);
  EXPECT_EQ(grid_to_json(parse_grid_config(grid_to_json(g))), grid_to_json(g));

  json bad = j;
  bad["seed"] = 1;
  EXPECT_THROW(parse_grid_config(bad), ConfigError);
  bad = j;
  bad["variants"] = {"v5"};
  EXPECT_THROW(parse_grid_config(bad), ConfigError);
  bad = j;
  bad["seeds"] = json::array();
  EXPECT_THROW(parse_grid_config(bad), ConfigError);
  bad = j;
  bad["schema"] = "nash.run";
  EXPECT_THROW(parse_grid_config(bad), ConfigError);
}
