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
#include <cstdint>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nash/errors.hpp"
#include "nash/tensor.hpp"

namespace nash {

enum class QuantKind { weight, relu_act, hardtanh_act, identity_act };

NLOHMANN_JSON_SERIALIZE_ENUM(QuantKind, {{QuantKind::weight, "weight"},
                                         {QuantKind::relu_act, "relu_act"},
                                         {QuantKind::hardtanh_act, "hardtanh_act"},
                                         {QuantKind::identity_act, "identity_act"}})

/// Configuration of one quantization site.
///
/// `range` only matters for relu_act (grid spans [0, range]) and identity_act
/// (grid spans [-range, range)); hardtanh always clamps to [-1, 1] and weights
/// derive their scale from the data.
struct QuantSpec {
  int bits = 8;
  bool is_signed = true;
  QuantKind kind = QuantKind::weight;
  float range = 2.0f;

  static QuantSpec weight(int bits) { return {bits, true, QuantKind::weight, 0.0f}; }
  static QuantSpec relu(int bits, float range) { return {bits, false, QuantKind::relu_act, range}; }
  static QuantSpec identity(int bits, float range) { return {bits, true, QuantKind::identity_act, range}; }
  static QuantSpec hardtanh(int bits) { return {bits, true, QuantKind::hardtanh_act, 1.0f}; }

  bool is_activation() const { return kind != QuantKind::weight; }
  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

inline void to_json(nlohmann::json& j, const QuantSpec& q) {
  j = {{"bits", q.bits}, {"signed", q.is_signed}, {"kind", q.kind}, {"range", q.range}};
}
inline void from_json(const nlohmann::json& j, QuantSpec& q) {
  j.at("bits").get_to(q.bits);
  j.at("signed").get_to(q.is_signed);
  j.at("kind").get_to(q.kind);
  j.at("range").get_to(q.range);
}

inline void validate(const QuantSpec& q) {
  if (q.bits < 1 || q.bits > 8) throw std::invalid_argument("quantizer bits must be in [1,8], got " + std::to_string(q.bits));
  if ((q.kind == QuantKind::relu_act || q.kind == QuantKind::identity_act) && !(q.range > 0.0f)) {
    throw std::invalid_argument("activation range must be positive");
  }
}

/// Uniform activation grid: value(count) = (count + offset) * scale for
/// count in [0, levels). Thresholds sit at the midpoints between levels, so
/// count(x) is the number of thresholds t with x >= t -- the same rule a
/// MultiThreshold node applies.
struct ActGrid {
  int levels = 2;
  float offset = 0.0f;
  float scale = 1.0f;

  std::vector<float> thresholds() const {
    std::vector<float> t(static_cast<std::size_t>(levels - 1));
    for (int k = 1; k < levels; ++k) t[k - 1] = (static_cast<float>(k) - 0.5f + offset) * scale;
    return t;
  }
  float value(int count) const { return (static_cast<float>(count) + offset) * scale; }
  float min_value() const { return value(0); }
  float max_value() const { return value(levels - 1); }
};

inline ActGrid act_grid(const QuantSpec& q) {
  validate(q);
  const int b = q.bits;
  switch (q.kind) {
    case QuantKind::relu_act: {
      const int hi = (1 << b) - 1;
      return {hi + 1, 0.0f, q.range / static_cast<float>(hi)};
    }
    case QuantKind::identity_act: {
      const int half = 1 << (b - 1);
      return {2 * half, -static_cast<float>(half), q.range / static_cast<float>(half)};
    }
    case QuantKind::hardtanh_act: {
      if (b == 1) return {2, -0.5f, 2.0f};  // {-1, +1}
      const int qmax = (1 << (b - 1)) - 1;
      return {2 * qmax + 1, -static_cast<float>(qmax), 1.0f / static_cast<float>(qmax)};
    }
    case QuantKind::weight:
      break;
  }
  throw std::invalid_argument("act_grid called with a weight quantizer");
}

inline int threshold_count(std::span<const float> thresholds, float x) {
  return static_cast<int>(std::upper_bound(thresholds.begin(), thresholds.end(), x) - thresholds.begin());
}

/// threshold_count for the thresholds of `grid`: starts from the nearest
/// level and corrects against the actual thresholds, so the result is
/// identical to the search.
inline int grid_count(const ActGrid& grid, std::span<const float> thresholds, float x) {
  if (std::isnan(x)) return threshold_count(thresholds, x);
  const float guess = std::floor(x / grid.scale - grid.offset + 0.5f);
  if (!(guess >= 0.0f)) return x >= thresholds.front() ? threshold_count(thresholds, x) : 0;
  int k = guess >= static_cast<float>(grid.levels - 1) ? grid.levels - 1 : static_cast<int>(guess);
  const int last = static_cast<int>(thresholds.size());
  while (k < last && x >= thresholds[static_cast<std::size_t>(k)]) ++k;
  while (k > 0 && x < thresholds[static_cast<std::size_t>(k - 1)]) --k;
  return k;
}

/// Quantized activation with a straight-through backward: upstream gradient
/// passes unchanged where the input lies inside the clip interval, zero
/// elsewhere.
inline Tensor act_quant(const Tensor& x, const QuantSpec& spec, Tape* tape = nullptr) {
  if (!spec.is_activation()) throw std::invalid_argument("act_quant needs an activation quantizer");
  const ActGrid grid = act_grid(spec);
  const auto ts = grid.thresholds();
  const float lo = spec.kind == QuantKind::hardtanh_act ? -1.0f : grid.min_value();
  const float hi = spec.kind == QuantKind::relu_act ? spec.range
                   : spec.kind == QuantKind::hardtanh_act ? 1.0f
                                                          : grid.max_value();
  Tensor y(x.shape(), 0.0f, should_record(tape, {&x}));
  auto ys = y.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = grid.value(grid_count(grid, ts, x[i]));
  if (should_record(tape, {&x})) {
    tape->record({x}, y, [x, y, lo, hi]() mutable {
      auto gx = x.grad();
      const auto gy = y.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        if (x[i] >= lo && x[i] <= hi) gx[i] += gy[i];
      }
    });
  }
  return y;
}

/// Integer levels plus per-output-channel scales; value = level * scale[m].
struct WeightQuant {
  std::vector<float> levels;
  std::vector<float> scales;  // one per output channel (dim 0)
  std::vector<std::uint8_t> pass;  // STE mask
  int qmax = 1;
};

/// 1 bit: level = sign(w) (zero maps to +1), scale = mean|w| per output
/// channel. b >= 2 bits: symmetric narrow range [-qmax, qmax] with
/// qmax = 2^(b-1)-1 and one per-tensor scale max|w|/qmax. Scale statistics are
/// reduced in double so re-quantizing a quantized tensor reproduces it.
inline WeightQuant compute_weight_quant(const Tensor& w, const QuantSpec& spec) {
  if (spec.kind != QuantKind::weight) throw std::invalid_argument("weight quantizer expected");
  validate(spec);
  if (w.rank() < 1 || w.dim(0) <= 0) throw std::invalid_argument("weight tensor needs an output-channel axis");
  const int m = w.dim(0);
  const std::size_t per = w.numel() / static_cast<std::size_t>(m);
  WeightQuant q;
  q.levels.resize(w.numel());
  q.pass.assign(w.numel(), 1);
  q.scales.resize(static_cast<std::size_t>(m));
  if (spec.bits == 1) {
    q.qmax = 1;
    for (int c = 0; c < m; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < per; ++k) acc += std::fabs(static_cast<double>(w[c * per + k]));
      q.scales[c] = static_cast<float>(acc / static_cast<double>(per));
      for (std::size_t k = 0; k < per; ++k) {
        const float v = w[c * per + k];
        q.levels[c * per + k] = v >= 0.0f ? 1.0f : -1.0f;
        q.pass[c * per + k] = std::fabs(v) <= 1.0f ? 1 : 0;
      }
    }
    return q;
  }
  q.qmax = (1 << (spec.bits - 1)) - 1;
  float max_abs = 0.0f;
  for (float v : w.data()) max_abs = std::max(max_abs, std::fabs(v));
  const float s = static_cast<float>(static_cast<double>(max_abs) / q.qmax);
  std::fill(q.scales.begin(), q.scales.end(), s);
  const float qm = static_cast<float>(q.qmax);
  for (std::size_t i = 0; i < w.numel(); ++i) {
    if (s == 0.0f) {
      q.levels[i] = 0.0f;
      continue;
    }
    q.levels[i] = std::clamp(std::nearbyint(w[i] / s), -qm, qm);
    q.pass[i] = std::fabs(w[i]) <= s * qm ? 1 : 0;
  }
  return q;
}

/// Quantized weight values (level * scale) with STE backward.
inline Tensor quantize_weight(const Tensor& w, const QuantSpec& spec, Tape* tape = nullptr) {
  const WeightQuant q = compute_weight_quant(w, spec);
  const std::size_t per = w.numel() / static_cast<std::size_t>(w.dim(0));
  Tensor y(w.shape(), 0.0f, should_record(tape, {&w}));
  auto ys = y.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = q.levels[i] * q.scales[i / per];
  if (should_record(tape, {&w})) {
    tape->record({w}, y, [w, y, pass = q.pass]() mutable {
      auto gw = w.grad();
      const auto gy = y.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        if (pass[i]) gw[i] += gy[i];
      }
    });
  }
  return y;
}

/// Integer weight levels as a tensor, plus scales. The backward maps a
/// gradient on the levels to the latent weights through level = w_q / scale,
/// i.e. the straight-through rule applied to w_q = level * scale.
struct QuantizedWeight {
  Tensor levels;
  std::vector<float> scales;
};

inline QuantizedWeight quantize_weight_levels(const Tensor& w, const QuantSpec& spec, Tape* tape = nullptr) {
  WeightQuant q = compute_weight_quant(w, spec);
  const std::size_t per = w.numel() / static_cast<std::size_t>(w.dim(0));
  Tensor levels(w.shape(), q.levels, should_record(tape, {&w}));
  if (should_record(tape, {&w})) {
    tape->record({w}, levels, [w, levels, pass = q.pass, scales = q.scales, per]() mutable {
      auto gw = w.grad();
      const auto gl = levels.grad();
      for (std::size_t i = 0; i < gl.size(); ++i) {
        const float s = scales[i / per];
        if (pass[i] && s > 0.0f) gw[i] += gl[i] / s;
      }
    });
  }
  return {levels, std::move(q.scales)};
}

// ---------------------------------------------------------------------------
// Bit-width plan

enum class Variant { original, v1, v2, v3, v4 };

NLOHMANN_JSON_SERIALIZE_ENUM(Variant, {{Variant::original, "original"},
                                       {Variant::v1, "v1"},
                                       {Variant::v2, "v2"},
                                       {Variant::v3, "v3"},
                                       {Variant::v4, "v4"}})

inline std::string to_string(Variant v) { return nlohmann::json(v).get<std::string>(); }

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::original, Variant::v1, Variant::v2, Variant::v3, Variant::v4}) {
    if (to_string(v) == s) return v;
  }
  if (s == "o") return Variant::original;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

/// Main-branch weight/activation widths, written wXaY.
struct WxAy {
  int w = 2;
  int a = 2;
  friend bool operator==(const WxAy&, const WxAy&) = default;
};

inline std::string to_string(WxAy b) { return "w" + std::to_string(b.w) + "a" + std::to_string(b.a); }

inline WxAy parse_wxay(const std::string& s) {
  int w = 0, a = 0;
  char tail = 0;
  if (std::sscanf(s.c_str(), "w%da%d%c", &w, &a, &tail) != 2) {
    throw std::invalid_argument("bit-width pair must look like w2a2, got '" + s + "'");
  }
  return {w, a};
}

struct BitWidthPlan {
  int backbone_w = 2;
  int backbone_a = 2;
  int residual_w = 8;
  int residual_a = 8;
  int nas_a = 8;
  int nas_w = 1;
  friend bool operator==(const BitWidthPlan&, const BitWidthPlan&) = default;
};

inline void to_json(nlohmann::json& j, const BitWidthPlan& p) {
  j = {{"backbone_w", p.backbone_w}, {"backbone_a", p.backbone_a}, {"residual_w", p.residual_w},
       {"residual_a", p.residual_a}, {"nas_a", p.nas_a},           {"nas_w", p.nas_w}};
}
inline void from_json(const nlohmann::json& j, BitWidthPlan& p) {
  j.at("backbone_w").get_to(p.backbone_w);
  j.at("backbone_a").get_to(p.backbone_a);
  j.at("residual_w").get_to(p.residual_w);
  j.at("residual_a").get_to(p.residual_a);
  j.at("nas_a").get_to(p.nas_a);
  j.at("nas_w").get_to(p.nas_w);
}

/// Residual branches and NAS activations stay at 8 bits; NAS weights are
/// binary except under v4, where they are 8-bit.
inline BitWidthPlan resolve_plan(Variant variant, WxAy bits) {
  auto supported = [](int b) { return b == 1 || b == 2 || b == 4 || b == 8; };
  if (!supported(bits.w) || !supported(bits.a)) {
    throw std::invalid_argument("unsupported bit-width pair " + to_string(bits));
  }
  BitWidthPlan p;
  p.backbone_w = bits.w;
  p.backbone_a = bits.a;
  p.residual_w = 8;
  p.residual_a = 8;
  p.nas_a = 8;
  p.nas_w = variant == Variant::v4 ? 8 : 1;
  return p;
}

/// Quantizer knobs outside the bit-width plan.
struct QuantConfig {
  float relu_range = 2.0f;                        // activation1 clip
  float add_range = 4.0f;                         // activation2 clip (identity)
  int add_bits = 8;                               // activation2 width
  QuantKind activation2 = QuantKind::identity_act;  // or hardtanh_act
  int input_bits = 8;                             // image quantizer, range [0,1]
  int edge_bits = 8;                              // stem and classifier weights
  friend bool operator==(const QuantConfig&, const QuantConfig&) = default;

  QuantSpec act2() const {
    return activation2 == QuantKind::hardtanh_act ? QuantSpec::hardtanh(add_bits)
                                                  : QuantSpec::identity(add_bits, add_range);
  }
};

inline void to_json(nlohmann::json& j, const QuantConfig& q) {
  j = {{"relu_range", q.relu_range}, {"add_range", q.add_range},   {"add_bits", q.add_bits},
       {"activation2", q.activation2}, {"input_bits", q.input_bits}, {"edge_bits", q.edge_bits}};
}
inline void from_json(const nlohmann::json& j, QuantConfig& q) {
  j.at("relu_range").get_to(q.relu_range);
  j.at("add_range").get_to(q.add_range);
  j.at("add_bits").get_to(q.add_bits);
  j.at("activation2").get_to(q.activation2);
  j.at("input_bits").get_to(q.input_bits);
  j.at("edge_bits").get_to(q.edge_bits);
}

}  // namespace nash
