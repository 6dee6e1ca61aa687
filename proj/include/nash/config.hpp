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

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "nash/errors.hpp"
#include "nash/folding.hpp"
#include "nash/model.hpp"
#include "nash/quant.hpp"
#include "nash/search.hpp"
#include "nash/train.hpp"

namespace nash {

enum class DataSource { synthetic, cifar10 };

NLOHMANN_JSON_SERIALIZE_ENUM(DataSource, {{DataSource::synthetic, "synthetic"}, {DataSource::cifar10, "cifar10"}})

struct DataConfig {
  DataSource source = DataSource::synthetic;
  std::string path;           // cifar10: directory holding the .bin batches
  int n_per_class = 40;       // synthetic training samples per class
  int test_per_class = 25;    // synthetic test samples per class
  int hw = 16;
  float sigma = 0.1f;
  std::uint64_t seed = 7;     // dataset seed, kept apart from the run seed
};

struct HardwareConfig {
  double clock_mhz = 100.0;
  FoldTarget fold;
  LutModel lut;
};

struct SearchParams {
  int epochs = 4;
  int batches_per_epoch = 8;
  int batch_size = 16;
  float lr_w = 0.05f;
  float lr_alpha = 0.3f;
  float momentum = 0.9f;
  float split = 0.5f;
  bool allow_zero = true;
};

/// Everything one pipeline run needs.
struct RunConfig {
  Variant variant = Variant::v1;
  WxAy bits;
  std::uint64_t seed = 1;
  NetworkSpec net;
  QuantConfig quant;
  DataConfig data;
  SearchParams search;
  TrainConfig train;
  HardwareConfig hardware;
  std::string output_dir = "runs/default";

  SearchConfig search_config() const {
    SearchConfig s;
    s.epochs = search.epochs;
    s.batches_per_epoch = search.batches_per_epoch;
    s.batch_size = search.batch_size;
    s.lr_w = search.lr_w;
    s.lr_alpha = search.lr_alpha;
    s.momentum = search.momentum;
    s.split = search.split;
    s.allow_zero = search.allow_zero;
    s.seed = Rng::mix(seed, 10);
    s.variant = variant;
    s.bits = bits;
    s.net = net;
    s.quant = quant;
    return s;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = Rng::mix(seed, 11);
    return t;
  }

  std::uint64_t init_seed() const { return Rng::mix(seed, 12); }
};

// ---------------------------------------------------------------------------
// Strict JSON reading: unknown keys and mistyped values are config errors.

namespace detail {

class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::string at = path_.empty() ? key : path_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError(at + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw ConfigError(at + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (it->is_number_integer() && !it->is_number_unsigned()) throw ConfigError(at + ": expected a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError(at + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError(at + ": expected a string");
    }
    try {
      dst = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(at + ": " + e.what());
    }
  }

  /// Enum or custom-parsed field given as a string.
  template <class F>
  void get_string(const char* key, F&& assign) {
    std::string s;
    const bool present = j_.contains(key);
    get(key, s);
    if (!present) return;
    try {
      assign(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(sub(key) + ": " + e.what());
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key '" + (path_.empty() ? k : path_ + "." + k) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

inline void read_group(const nlohmann::json& j, const std::string& path, GroupSpec& g) {
  StrictObject o(j, path);
  o.get("in_channels", g.in_channels);
  o.get("out_channels", g.out_channels);
  o.get("stride", g.stride);
  o.finish();
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::StrictObject;
  RunConfig c;
  StrictObject root(j, "");
  std::string schema = "nash.run";
  int version = 1;
  root.get("schema", schema);
  root.get("version", version);
  if (schema != "nash.run" || version != 1) throw ConfigError("config schema must be nash.run version 1");
  root.get_string("variant", [&](const std::string& s) { c.variant = parse_variant(s); });
  root.get_string("bits", [&](const std::string& s) { c.bits = parse_wxay(s); });
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);

  if (const auto* n = root.child("network")) {
    StrictObject o(*n, "network");
    o.get("in_channels", c.net.in_channels);
    o.get("stem_channels", c.net.stem_channels);
    o.get("stem_stride", c.net.stem_stride);
    o.get("classes", c.net.classes);
    if (const auto* gs = o.child("groups")) {
      if (!gs->is_array()) throw ConfigError("network.groups must be an array");
      c.net.groups.clear();
      for (std::size_t k = 0; k < gs->size(); ++k) {
        GroupSpec g;
        detail::read_group((*gs)[k], "network.groups[" + std::to_string(k) + "]", g);
        c.net.groups.push_back(g);
      }
    }
    o.finish();
  }
  if (const auto* q = root.child("quant")) {
    StrictObject o(*q, "quant");
    o.get("relu_range", c.quant.relu_range);
    o.get("add_range", c.quant.add_range);
    o.get("add_bits", c.quant.add_bits);
    o.get_string("activation2", [&](const std::string& s) {
      if (s == "identity") c.quant.activation2 = QuantKind::identity_act;
      else if (s == "hardtanh") c.quant.activation2 = QuantKind::hardtanh_act;
      else throw std::invalid_argument("must be identity or hardtanh");
    });
    o.get("input_bits", c.quant.input_bits);
    o.get("edge_bits", c.quant.edge_bits);
    o.finish();
  }
  if (const auto* d = root.child("data")) {
    StrictObject o(*d, "data");
    o.get_string("source", [&](const std::string& s) {
      if (s == "synthetic") c.data.source = DataSource::synthetic;
      else if (s == "cifar10") c.data.source = DataSource::cifar10;
      else throw std::invalid_argument("must be synthetic or cifar10");
    });
    o.get("path", c.data.path);
    o.get("n_per_class", c.data.n_per_class);
    o.get("test_per_class", c.data.test_per_class);
    o.get("hw", c.data.hw);
    o.get("sigma", c.data.sigma);
    o.get("seed", c.data.seed);
    o.finish();
  }
  if (const auto* s = root.child("search")) {
    StrictObject o(*s, "search");
    o.get("epochs", c.search.epochs);
    o.get("batches_per_epoch", c.search.batches_per_epoch);
    o.get("batch_size", c.search.batch_size);
    o.get("lr_w", c.search.lr_w);
    o.get("lr_alpha", c.search.lr_alpha);
    o.get("momentum", c.search.momentum);
    o.get("split", c.search.split);
    o.get("allow_zero", c.search.allow_zero);
    o.finish();
  }
  if (const auto* t = root.child("train")) {
    StrictObject o(*t, "train");
    o.get("epochs", c.train.epochs);
    o.get("batch_size", c.train.batch_size);
    o.get("lr", c.train.lr);
    o.get("momentum", c.train.momentum);
    o.get_string("schedule", [&](const std::string& s) {
      if (s == "constant") c.train.schedule = LrSchedule::constant;
      else if (s == "step") c.train.schedule = LrSchedule::step;
      else throw std::invalid_argument("must be constant or step");
    });
    o.finish();
  }
  if (const auto* h = root.child("hardware")) {
    StrictObject o(*h, "hardware");
    o.get("clock_mhz", c.hardware.clock_mhz);
    o.get("cap_pe", c.hardware.fold.cap_pe);
    o.get("cap_simd", c.hardware.fold.cap_simd);
    o.get_string("fold_mode", [&](const std::string& s) {
      if (s == "max_parallel") c.hardware.fold.mode = FoldMode::max_parallel;
      else if (s == "budget") c.hardware.fold.mode = FoldMode::budget;
      else throw std::invalid_argument("must be max_parallel or budget");
    });
    o.get("budget", c.hardware.fold.budget);
    o.get("k_mac", c.hardware.lut.k_mac);
    o.get("k_threshold", c.hardware.lut.k_threshold);
    o.finish();
  }
  root.finish();
  return c;
}

/// Semantic validation; every failure is a ConfigError.
inline void validate(const RunConfig& c) {
  try {
    c.net.validate();
    resolve_plan(c.variant, c.bits);
    validate(QuantSpec::relu(c.quant.input_bits, 1.0f));
    validate(QuantSpec::relu(c.quant.edge_bits, c.quant.relu_range));
    validate(c.quant.act2());
    if (c.variant != Variant::original) c.search_config().validate();
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.data.source == DataSource::synthetic) {
    if (c.data.n_per_class < 1 || c.data.test_per_class < 1 || c.data.hw < 4 || !(c.data.sigma >= 0.0f)) {
      throw ConfigError("data: synthetic sizes must be positive (hw >= 4) and sigma >= 0");
    }
  } else if (c.data.path.empty()) {
    throw ConfigError("data.path is required for cifar10");
  } else if (c.net.in_channels != 3 || c.net.classes != 10) {
    throw ConfigError("cifar10 needs network.in_channels = 3 and network.classes = 10");
  }
  if (!(c.hardware.clock_mhz > 0.0)) throw ConfigError("hardware.clock_mhz must be positive");
  if (c.hardware.fold.cap_pe < 1 || c.hardware.fold.cap_simd < 1) throw ConfigError("hardware caps must be >= 1");
  if (c.hardware.fold.mode == FoldMode::budget && c.hardware.fold.budget < 1) throw ConfigError("hardware.budget must be >= 1");
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

inline nlohmann::json to_json_config(const RunConfig& c) {
  nlohmann::json j;
  j["schema"] = "nash.run";
  j["version"] = 1;
  j["variant"] = to_string(c.variant);
  j["bits"] = to_string(c.bits);
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["network"] = c.net;
  j["quant"] = {{"relu_range", c.quant.relu_range}, {"add_range", c.quant.add_range}, {"add_bits", c.quant.add_bits},
                {"activation2", c.quant.activation2 == QuantKind::hardtanh_act ? "hardtanh" : "identity"},
                {"input_bits", c.quant.input_bits}, {"edge_bits", c.quant.edge_bits}};
  j["data"] = {{"source", c.data.source},   {"path", c.data.path}, {"n_per_class", c.data.n_per_class},
               {"test_per_class", c.data.test_per_class}, {"hw", c.data.hw}, {"sigma", c.data.sigma},
               {"seed", c.data.seed}};
  j["search"] = {{"epochs", c.search.epochs},   {"batches_per_epoch", c.search.batches_per_epoch},
                 {"batch_size", c.search.batch_size}, {"lr_w", c.search.lr_w},
                 {"lr_alpha", c.search.lr_alpha}, {"momentum", c.search.momentum},
                 {"split", c.search.split},     {"allow_zero", c.search.allow_zero}};
  j["train"] = {{"epochs", c.train.epochs}, {"batch_size", c.train.batch_size}, {"lr", c.train.lr},
                {"momentum", c.train.momentum}, {"schedule", c.train.schedule}};
  j["hardware"] = {{"clock_mhz", c.hardware.clock_mhz}, {"cap_pe", c.hardware.fold.cap_pe},
                   {"cap_simd", c.hardware.fold.cap_simd}, {"fold_mode", c.hardware.fold.mode},
                   {"budget", c.hardware.fold.budget}, {"k_mac", c.hardware.lut.k_mac},
                   {"k_threshold", c.hardware.lut.k_threshold}};
  return j;
}

/// Reads a config file, applies path overrides from the environment
/// (NASH_DATA_DIR, NASH_OUTPUT_DIR) and validates it.
inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig c = parse_run_config(j);
  if (const char* d = std::getenv("NASH_DATA_DIR")) c.data.path = d;
  if (const char* o = std::getenv("NASH_OUTPUT_DIR")) c.output_dir = o;
  validate(c);
  return c;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

/// Hash over every semantic field; the output directory is excluded so the
/// same experiment hashes equal wherever it is written.
inline std::string config_hash(const RunConfig& c) {
  nlohmann::json j = to_json_config(c);
  j.erase("output_dir");
  return hex64(fnv1a(j.dump()));
}

}  // namespace nash
