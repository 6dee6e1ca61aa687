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

// nash: command line front end for search, training, lowering, estimation
// and Pareto reporting.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nash/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitFormat = 4;
constexpr int kExitOther = 1;

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw nash::FormatError("cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw nash::FormatError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  nash::write_artifact(p, nash::dump_json(j));
}

/// Dataset for a stage: a CIFAR-10 directory when given, else the config's
/// data section.
nash::DataSplit stage_data(const nash::RunConfig& cfg, const std::string& data_dir) {
  if (data_dir.empty()) return nash::load_data(cfg.data, cfg.net);
  nash::DataConfig d = cfg.data;
  d.source = nash::DataSource::cifar10;
  d.path = data_dir;
  return nash::load_data(d, cfg.net);
}

/// Architecture from either a search result (topology and quantizers taken
/// from the run config) or a standalone architecture document.
nash::Architecture read_architecture(const fs::path& p, const nash::RunConfig& cfg) {
  const auto j = read_json(p);
  try {
    if (j.value("schema", "") == "nash.search") {
      nash::SearchResult r = j.get<nash::SearchResult>();
      r.config = cfg.search_config();
      if (r.cells.size() != cfg.net.groups.size()) {
        throw nash::ConfigError(p.string() + ": " + std::to_string(r.cells.size()) + " cell(s) but the config has " +
                                std::to_string(cfg.net.groups.size()) + " group(s)");
      }
      return nash::architecture_of(r);
    }
    return j.get<nash::Architecture>();
  } catch (const nlohmann::json::exception& e) {
    throw nash::FormatError(p.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw nash::FormatError(p.string() + ": " + e.what());
  }
}

int cmd_search(const std::string& config, const std::string& data_dir, const std::string& out) {
  const auto cfg = nash::load_run_config(config);
  if (cfg.variant == nash::Variant::original) throw nash::ConfigError("variant 'original' has nothing to search");
  const auto data = stage_data(cfg, data_dir);
  const auto result = nash::run_search(cfg.search_config(), data.train);
  write_json(out, result);
  std::cout << "search: " << result.cells.size() << " cell(s), " << result.audit.size() << " audit event(s) -> " << out << "\n";
  return kExitOk;
}

int cmd_train(const std::string& arch_path, const std::string& data_dir, const std::string& config, const std::string& out) {
  const auto cfg = nash::load_run_config(config);
  const auto arch = arch_path.empty() ? nash::original_architecture(cfg.net, cfg.bits, cfg.quant) : read_architecture(arch_path, cfg);
  const auto data = stage_data(cfg, data_dir);
  nash::Model m = nash::build_final_model(arch, cfg.init_seed());
  const auto history = nash::train_model(m, data.train, cfg.train_config());
  nash::save_trained(m, data.train.height, data.train.width, out);
  const auto acc = nash::evaluate_topk(m, data.test);
  std::ofstream csv(fs::path(out) / "metrics.csv");
  csv << "epoch,loss,top1,top5\n";
  for (const auto& h : history) {
    csv << h.epoch << ',' << nash::format_double(h.loss) << ',' << nash::format_double(h.top1) << ','
        << nash::format_double(h.top5) << '\n';
  }
  std::cout << "train: test top1 " << acc.top1 << ", top5 " << acc.top5 << " -> " << out << "\n";
  return kExitOk;
}

int cmd_lower(const std::string& ckpt, const std::string& out, bool raw) {
  const auto bundle = nash::load_trained(ckpt);
  const auto graphs = nash::lower_model(bundle.model, bundle.height, bundle.width);
  const auto& g = raw ? graphs.exported : graphs.lowered;
  write_json(out, g);
  std::cout << "lower: " << g.nodes.size() << " nodes -> " << out << "\n";
  return kExitOk;
}

int cmd_estimate(const std::string& ir, double clock, int cap_pe, int cap_simd, const std::string& out) {
  const auto g = read_json(ir).get<nash::GraphIR>();
  nash::FoldTarget t;
  t.cap_pe = cap_pe;
  t.cap_simd = cap_simd;
  const auto folding = nash::fold_layers(g, t);
  const auto est = nash::estimate_resources(g, folding, clock);
  nlohmann::json j = est;
  j["folding"] = folding;
  write_json(out, j);
  std::cout << "estimate: latency " << est.latency_ms << " ms, throughput " << est.throughput_fps << " fps, BRAM " << est.bram
            << ", LUT " << est.lut << " -> " << out << "\n";
  return kExitOk;
}

int cmd_pareto(const std::vector<std::string>& inputs, const std::string& resource, const std::string& out,
               const std::string& plot) {
  std::vector<nash::ParetoPoint> points;
  for (const auto& in : inputs) {
    fs::path p = in;
    if (fs::is_directory(p)) p /= "point.json";
    auto j = read_json(p);
    if (j.contains("point")) j = j.at("point");  // manifest or point.json
    try {
      points.push_back(j.get<nash::ParetoPoint>());
    } catch (const nlohmann::json::exception& e) {
      throw nash::FormatError(p.string() + ": " + e.what());
    }
  }
  nash::ResourceKey key;
  try {
    key = nash::parse_resource_key(resource);
  } catch (const std::invalid_argument& e) {
    throw nash::ConfigError(e.what());
  }
  const auto front = nash::pareto_front(points, key);
  nash::emit_csv(front, out);
  if (!plot.empty()) nash::emit_plot(points, front, key, plot);
  std::cout << "pareto: " << front.size() << " of " << points.size() << " point(s) on the front -> " << out << "\n";
  return kExitOk;
}

int cmd_run(const std::string& config) {
  nlohmann::json j;
  try {
    j = read_json(config);
  } catch (const nash::FormatError& e) {
    throw nash::ConfigError(e.what());
  }
  if (j.value("schema", "") == "nash.grid") {
    auto g = nash::parse_grid_config(j);
    if (const char* o = std::getenv("NASH_OUTPUT_DIR")) g.output_dir = o;
    if (const char* d = std::getenv("NASH_DATA_DIR")) g.base.data.path = d;
    nash::validate(g.base);
    const auto s = nash::run_grid(g, [](const nash::RunSummary& r) {
      std::cout << r.point.label << ": error " << r.point.error_pct << "%, BRAM " << r.point.bram << ", latency "
                << r.point.latency_ms << " ms\n";
    });
    std::cout << "grid: " << s.runs.size() << " run(s) -> " << g.output_dir << "\n";
    return kExitOk;
  }
  const auto cfg = nash::load_run_config(config);
  const auto r = nash::run_pipeline(cfg);
  std::cout << r.point.label << ": error " << r.point.error_pct << "%, BRAM " << r.point.bram << ", latency "
            << r.point.latency_ms << " ms -> " << r.dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hardware-aware architecture search for quantized CNNs"};
  app.require_subcommand(1);

  std::string config, data_dir, out, arch, ckpt, ir, resource = "bram", plot;
  std::vector<std::string> inputs;
  double clock = 100.0;
  int cap_pe = 64, cap_simd = 64;
  bool raw = false;

  auto* search = app.add_subcommand("search", "Run the architecture search and write the derived cells");
  search->add_option("--config", config, "Run config (JSON)")->required();
  search->add_option("--data", data_dir, "CIFAR-10 binary directory (default: config data section)");
  search->add_option("--out", out, "Search result JSON")->required();

  auto* train = app.add_subcommand("train", "Train the derived (or backbone-only) network");
  train->add_option("--arch", arch, "Search result or architecture JSON (omit for the backbone)");
  train->add_option("--data", data_dir, "CIFAR-10 binary directory (default: config data section)");
  train->add_option("--config", config, "Run config (JSON)")->required();
  train->add_option("--out", out, "Checkpoint directory")->required();

  auto* lower = app.add_subcommand("lower", "Export a trained checkpoint to the inference IR");
  lower->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  lower->add_option("--out", out, "IR JSON")->required();
  lower->add_flag("--raw", raw, "Skip streamlining and cascade lowering");

  auto* estimate = app.add_subcommand("estimate", "Fold an IR graph and estimate latency and resources");
  estimate->add_option("--ir", ir, "IR JSON")->required();
  estimate->add_option("--clock", clock, "Clock in MHz")->capture_default_str();
  estimate->add_option("--cap-pe", cap_pe, "PE cap")->capture_default_str();
  estimate->add_option("--cap-simd", cap_simd, "SIMD cap")->capture_default_str();
  estimate->add_option("--out", out, "Estimate JSON")->required();

  auto* pareto = app.add_subcommand("pareto", "Build the error/resource Pareto front of finished runs");
  pareto->add_option("--in", inputs, "Run directories, manifests or point files")->required();
  pareto->add_option("--resource", resource, "bram or lut")->capture_default_str();
  pareto->add_option("--out", out, "Front CSV")->required();
  pareto->add_option("--plot", plot, "Front SVG");

  auto* run = app.add_subcommand("run", "Run the full pipeline (or a grid) from one config");
  run->add_option("--config", config, "Run or grid config (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*search) return cmd_search(config, data_dir, out);
    if (*train) return cmd_train(arch, data_dir, config, out);
    if (*lower) return cmd_lower(ckpt, out, raw);
    if (*estimate) return cmd_estimate(ir, clock, cap_pe, cap_simd, out);
    if (*pareto) return cmd_pareto(inputs, resource, out, plot);
    if (*run) return cmd_run(config);
  } catch (const nash::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nash::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const nash::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
