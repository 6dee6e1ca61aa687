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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nash/checkpoint.hpp"
#include "nash/config.hpp"
#include "nash/data.hpp"
#include "nash/errors.hpp"
#include "nash/folding.hpp"
#include "nash/ir.hpp"
#include "nash/model.hpp"
#include "nash/passes.hpp"
#include "nash/report.hpp"
#include "nash/search.hpp"
#include "nash/train.hpp"

namespace nash {

struct DataSplit {
  Dataset train;
  Dataset test;
};

inline DataSplit load_data(const DataConfig& d, const NetworkSpec& net) {
  DataSplit s;
  if (d.source == DataSource::synthetic) {
    s.train = synth_dataset(net.classes, d.n_per_class, d.hw, d.seed, d.sigma, net.in_channels);
    s.test = synth_dataset(net.classes, d.test_per_class, d.hw, Rng::mix(d.seed, 1), d.sigma, net.in_channels);
  } else {
    s.train = load_cifar10_dir(d.path, false);
    s.test = load_cifar10_dir(d.path, true);
  }
  if (s.train.channels != net.in_channels || s.train.classes != net.classes) {
    throw ConfigError("dataset geometry does not match the network spec");
  }
  return s;
}

inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

/// Writes `text` to `path` and returns its FNV-1a hash.
inline std::string write_artifact(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  return hex64(fnv1a(text));
}

inline std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a(ss.str()));
}

// ---------------------------------------------------------------------------
// Trained-model bundle: weights plus the architecture and input size needed
// to rebuild and lower it.

inline void save_trained(const Model& m, int height, int width, const std::filesystem::path& dir) {
  save_checkpoint(m.params(), dir);
  nlohmann::json a = m.arch();
  a["input_hw"] = {height, width};
  write_artifact(dir / "arch.json", dump_json(a));
}

struct TrainedBundle {
  Model model;
  int height = 0;
  int width = 0;
};

inline TrainedBundle load_trained(const std::filesystem::path& dir) {
  std::ifstream in(dir / "arch.json");
  if (!in) throw FormatError("missing arch.json in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("arch.json: " + std::string(e.what()));
  }
  Architecture arch;
  int h = 0, w = 0;
  try {
    arch = j.get<Architecture>();
    h = j.at("input_hw").at(0).get<int>();
    w = j.at("input_hw").at(1).get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("arch.json: " + std::string(e.what()));
  }
  Model m = build_final_model(arch, 0);
  const auto weights = load_checkpoint(dir);
  for (const auto& [name, t] : m.params()) {
    if (!weights.count(name)) throw FormatError("checkpoint lacks tensor '" + name + "'");
  }
  copy_params(m, weights);
  return {std::move(m), h, w};
}

/// Largest |a - b| over two equally shaped tensors.
inline float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff: shape mismatch");
  float d = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) d = std::max(d, std::fabs(a[i] - b[i]));
  return d;
}

/// Lowering used by the pipeline: export with explicit sign-bias adds, then
/// streamline and cascade.
struct LoweredGraphs {
  GraphIR exported;
  GraphIR lowered;
};

inline LoweredGraphs lower_model(const Model& m, int height, int width) {
  LoweredGraphs g;
  g.exported = export_ir(m, height, width, {.separate_sign_bias = true});
  g.lowered = lower_for_hardware(g.exported);
  validate(g.lowered);
  return g;
}

// ---------------------------------------------------------------------------
// One run

struct RunSummary {
  std::filesystem::path dir;
  nlohmann::json manifest;
  ParetoPoint point;
  TopK accuracy;
  ResourceEstimate estimate;
};

inline std::string run_label(const RunConfig& c) {
  return to_string(c.variant) + "_" + to_string(c.bits) + "_s" + std::to_string(c.seed);
}

/// search -> train -> lower -> estimate -> report, persisting every stage's
/// artifacts and a manifest. On failure the manifest records the stage and
/// the error is rethrown.
inline RunSummary run_pipeline(const RunConfig& cfg) {
  validate(cfg);
  namespace fs = std::filesystem;
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);

  RunSummary out;
  out.dir = dir;
  nlohmann::json& man = out.manifest;
  man = {{"schema", "nash.manifest"}, {"version", 1},           {"label", run_label(cfg)},
         {"config_hash", config_hash(cfg)}, {"seed", cfg.seed}, {"variant", to_string(cfg.variant)},
         {"bits", to_string(cfg.bits)}, {"status", "running"}, {"stages", nlohmann::json::array()}};
  std::string stage = "config";
  auto record = [&](const std::string& name, nlohmann::json artifacts) {
    man["stages"].push_back({{"stage", name}, {"artifacts", std::move(artifacts)}});
  };
  auto write_manifest = [&] { write_artifact(dir / "manifest.json", dump_json(man)); };

  try {
    nlohmann::json cj = to_json_config(cfg);
    cj.erase("output_dir");  // the run directory itself; keeps artifacts location-independent
    record("config", {{"config.json", write_artifact(dir / "config.json", dump_json(cj))}});

    stage = "data";
    const DataSplit data = load_data(cfg.data, cfg.net);
    record("data", {{"train_samples", data.train.size()}, {"test_samples", data.test.size()}});

    stage = "search";
    Architecture arch;
    if (cfg.variant == Variant::original) {
      arch = original_architecture(cfg.net, cfg.bits, cfg.quant);
    } else {
      const SearchResult sr = run_search(cfg.search_config(), data.train);
      record("search", {{"search.json", write_artifact(dir / "search.json", dump_json(sr))}});
      arch = architecture_of(sr);
    }
    const std::string arch_hash = write_artifact(dir / "arch.json", dump_json(arch));

    stage = "train";
    Model model = build_final_model(arch, cfg.init_seed());
    const auto history = train_model(model, data.train, cfg.train_config());
    std::ostringstream csv;
    csv << "epoch,loss,top1,top5\n";
    for (const auto& h : history) {
      csv << h.epoch << ',' << format_double(h.loss) << ',' << format_double(h.top1) << ',' << format_double(h.top5) << '\n';
    }
    save_trained(model, data.train.height, data.train.width, dir / "checkpoint");
    record("train", {{"arch.json", arch_hash},
                     {"metrics.csv", write_artifact(dir / "metrics.csv", csv.str())},
                     {"checkpoint/weights.bin", file_hash(dir / "checkpoint" / "weights.bin")}});

    stage = "evaluate";
    out.accuracy = evaluate_topk(model, data.test);
    if (out.accuracy.top5 < out.accuracy.top1) throw InvalidState("top-5 accuracy below top-1");
    const nlohmann::json ev = {{"schema", "nash.eval"},           {"version", 1},
                               {"top1", out.accuracy.top1},       {"top5", out.accuracy.top5},
                               {"error_pct", error_pct(out.accuracy.top1)}, {"test_samples", data.test.size()}};
    record("evaluate", {{"eval.json", write_artifact(dir / "eval.json", dump_json(ev))}});

    stage = "lower";
    const LoweredGraphs g = lower_model(model, data.train.height, data.train.width);
    std::vector<std::size_t> probe;
    for (std::size_t i = 0; i < std::min<std::size_t>(16, data.test.size()); ++i) probe.push_back(i);
    const Tensor x = data.test.batch(probe).first;
    const Tensor ref = model.forward(x);
    const float d_export = max_abs_diff(interpret(g.exported, x), ref);
    const float d_lowered = max_abs_diff(interpret(g.lowered, x), ref);
    if (d_export > 1e-4f || d_lowered > 1e-4f) {
      throw InvalidState("lowered graph deviates from the model by " + std::to_string(std::max(d_export, d_lowered)));
    }
    record("lower", {{"model.ir.json", write_artifact(dir / "model.ir.json", dump_json(g.exported))},
                     {"model.lowered.ir.json", write_artifact(dir / "model.lowered.ir.json", dump_json(g.lowered))},
                     {"max_abs_diff", std::max(d_export, d_lowered)}});

    stage = "estimate";
    const FoldingConfig folding = fold_layers(g.lowered, cfg.hardware.fold);
    out.estimate = estimate_resources(g.lowered, folding, cfg.hardware.clock_mhz, cfg.hardware.lut);
    record("estimate", {{"folding.json", write_artifact(dir / "folding.json", dump_json({{"schema", "nash.folding"}, {"version", 1}, {"layers", folding}}))},
                        {"estimate.json", write_artifact(dir / "estimate.json", dump_json(out.estimate))}});

    stage = "report";
    out.point = {run_label(cfg),
                 to_string(cfg.variant),
                 cfg.bits.w,
                 cfg.bits.a,
                 error_pct(out.accuracy.top1),
                 static_cast<double>(out.estimate.bram),
                 out.estimate.lut,
                 out.estimate.latency_ms,
                 out.estimate.throughput_fps};
    record("report", {{"point.json", write_artifact(dir / "point.json", dump_json({{"schema", "nash.point"}, {"version", 1}, {"point", out.point}}))}});
    man["point"] = out.point;
    man["status"] = "ok";
  } catch (const std::exception& e) {
    man["status"] = "failed";
    man["failed_stage"] = stage;
    man["error"] = e.what();
    write_manifest();
    throw;
  }
  write_manifest();
  return out;
}

// ---------------------------------------------------------------------------
// Grid of runs

struct GridConfig {
  RunConfig base;
  std::vector<Variant> variants{Variant::original, Variant::v1, Variant::v2, Variant::v3, Variant::v4};
  std::vector<WxAy> bits{{1, 1}, {2, 2}};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string output_dir = "runs/grid";
};

inline GridConfig parse_grid_config(const nlohmann::json& j) {
  detail::StrictObject root(j, "");
  std::string schema;
  int version = 0;
  root.get("schema", schema);
  root.get("version", version);
  if (schema != "nash.grid" || version != 1) throw ConfigError("grid config schema must be nash.grid version 1");
  GridConfig g;
  if (const auto* b = root.child("base")) g.base = parse_run_config(*b);
  std::vector<std::string> variants, bits;
  root.get("variants", variants);
  root.get("bits", bits);
  root.get("seeds", g.seeds);
  root.get("output_dir", g.output_dir);
  root.finish();
  try {
    if (j.contains("variants")) {
      g.variants.clear();
      for (const auto& v : variants) g.variants.push_back(parse_variant(v));
    }
    if (j.contains("bits")) {
      g.bits.clear();
      for (const auto& b : bits) g.bits.push_back(parse_wxay(b));
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (g.variants.empty() || g.bits.empty() || g.seeds.empty()) throw ConfigError("grid needs variants, bits and seeds");
  return g;
}

inline nlohmann::json grid_to_json(const GridConfig& g) {
  nlohmann::json vs = nlohmann::json::array(), bs = nlohmann::json::array();
  for (auto v : g.variants) vs.push_back(to_string(v));
  for (auto b : g.bits) bs.push_back(to_string(b));
  return {{"schema", "nash.grid"}, {"version", 1}, {"base", to_json_config(g.base)}, {"variants", vs},
          {"bits", bs},            {"seeds", g.seeds}, {"output_dir", g.output_dir}};
}

struct GridSummary {
  std::vector<RunSummary> runs;
  std::vector<ParetoPoint> points;
};

/// Runs every (variant, bits, seed) combination into its own directory and
/// writes the collected points with both Pareto fronts.
inline GridSummary run_grid(const GridConfig& g, const std::function<void(const RunSummary&)>& on_run = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(g.output_dir);
  GridSummary s;
  nlohmann::json index = nlohmann::json::array();
  for (Variant v : g.variants) {
    for (WxAy b : g.bits) {
      for (std::uint64_t seed : g.seeds) {
        RunConfig c = g.base;
        c.variant = v;
        c.bits = b;
        c.seed = seed;
        c.output_dir = (fs::path(g.output_dir) / run_label(c)).string();
        RunSummary r = run_pipeline(c);
        index.push_back({{"label", run_label(c)}, {"manifest", file_hash(r.dir / "manifest.json")}});
        s.points.push_back(r.point);
        if (on_run) on_run(r);
        s.runs.push_back(std::move(r));
      }
    }
  }
  const fs::path out = g.output_dir;
  emit_csv(s.points, out / "points.csv");
  for (ResourceKey k : {ResourceKey::bram, ResourceKey::lut}) {
    const auto front = pareto_front(s.points, k);
    emit_csv(front, out / (std::string("front_") + to_string(k) + ".csv"));
    emit_plot(s.points, front, k, out / (std::string("front_") + to_string(k) + ".svg"));
  }
  write_artifact(out / "grid.json", dump_json({{"schema", "nash.grid_result"}, {"version", 1}, {"runs", index}}));
  return s;
}

}  // namespace nash
