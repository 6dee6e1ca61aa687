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
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nash/errors.hpp"

namespace nash {

struct ParetoPoint {
  std::string label;
  std::string variant;
  int wbits = 0;
  int abits = 0;
  double error_pct = 0.0;
  double bram = 0.0;
  double lut = 0.0;
  double latency_ms = 0.0;
  double throughput_fps = 0.0;
  friend bool operator==(const ParetoPoint&, const ParetoPoint&) = default;

  void validate() const {
    if (!(error_pct >= 0.0 && error_pct <= 100.0)) throw std::invalid_argument("point '" + label + "': error_pct outside [0,100]");
    if (!(bram >= 0.0) || !(lut >= 0.0)) throw std::invalid_argument("point '" + label + "': negative resource");
  }
};

inline void to_json(nlohmann::json& j, const ParetoPoint& p) {
  j = {{"label", p.label}, {"variant", p.variant}, {"wbits", p.wbits},
       {"abits", p.abits}, {"error_pct", p.error_pct}, {"bram", p.bram},
       {"lut", p.lut},     {"latency_ms", p.latency_ms}, {"throughput_fps", p.throughput_fps}};
}
inline void from_json(const nlohmann::json& j, ParetoPoint& p) {
  j.at("label").get_to(p.label);
  j.at("variant").get_to(p.variant);
  j.at("wbits").get_to(p.wbits);
  j.at("abits").get_to(p.abits);
  j.at("error_pct").get_to(p.error_pct);
  j.at("bram").get_to(p.bram);
  j.at("lut").get_to(p.lut);
  j.at("latency_ms").get_to(p.latency_ms);
  j.at("throughput_fps").get_to(p.throughput_fps);
}

enum class ResourceKey { bram, lut };

inline ResourceKey parse_resource_key(const std::string& s) {
  if (s == "bram") return ResourceKey::bram;
  if (s == "lut") return ResourceKey::lut;
  throw std::invalid_argument("resource must be bram or lut, got '" + s + "'");
}
inline const char* to_string(ResourceKey k) { return k == ResourceKey::bram ? "bram" : "lut"; }

inline double resource_of(const ParetoPoint& p, ResourceKey k) { return k == ResourceKey::bram ? p.bram : p.lut; }

/// Non-dominated points under (resource, error), resource ascending. Points
/// equal in both coordinates collapse onto the lexicographically first label.
inline std::vector<ParetoPoint> pareto_front(const std::vector<ParetoPoint>& points, ResourceKey key) {
  for (const auto& p : points) p.validate();
  std::vector<ParetoPoint> sorted = points;
  std::sort(sorted.begin(), sorted.end(), [key](const ParetoPoint& a, const ParetoPoint& b) {
    const double ra = resource_of(a, key), rb = resource_of(b, key);
    if (ra != rb) return ra < rb;
    if (a.error_pct != b.error_pct) return a.error_pct < b.error_pct;
    return a.label < b.label;
  });
  std::vector<ParetoPoint> front;
  double best = std::numeric_limits<double>::infinity();
  for (auto& p : sorted) {
    if (p.error_pct < best) {
      best = p.error_pct;
      front.push_back(std::move(p));
    }
  }
  return front;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kCsvHeader = "label,variant,wbits,abits,error_pct,bram,lut,latency_ms,throughput_fps";

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline void check_csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") != std::string::npos) throw std::invalid_argument("CSV field '" + s + "' contains a separator");
}

inline void emit_csv(const std::vector<ParetoPoint>& points, const std::filesystem::path& path) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const auto& p : points) {
    check_csv_field(p.label);
    check_csv_field(p.variant);
    os << p.label << ',' << p.variant << ',' << p.wbits << ',' << p.abits << ',' << format_double(p.error_pct) << ','
       << format_double(p.bram) << ',' << format_double(p.lut) << ',' << format_double(p.latency_ms) << ','
       << format_double(p.throughput_fps) << '\n';
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << os.str();
}

namespace detail {

inline double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw FormatError("CSV line " + std::to_string(line) + ": '" + s + "' is not a number");
  }
  return v;
}

}  // namespace detail

inline std::vector<ParetoPoint> load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw FormatError(path.string() + ": unexpected CSV header");
  std::vector<ParetoPoint> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw FormatError("CSV line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    ParetoPoint p;
    p.label = f[0];
    p.variant = f[1];
    p.wbits = static_cast<int>(detail::parse_double(f[2], lineno));
    p.abits = static_cast<int>(detail::parse_double(f[3], lineno));
    p.error_pct = detail::parse_double(f[4], lineno);
    p.bram = detail::parse_double(f[5], lineno);
    p.lut = detail::parse_double(f[6], lineno);
    p.latency_ms = detail::parse_double(f[7], lineno);
    p.throughput_fps = detail::parse_double(f[8], lineno);
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVG

/// Plot area mapping. The front polyline is drawn in data coordinates
/// inside a group carrying this transform, so its vertices are the exact
/// front values.
struct SvgFrame {
  double width = 640, height = 480, margin = 60;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;  // data ranges (resource, error)
  double sx() const { return (width - 2 * margin) / (x1 - x0); }
  double sy() const { return (height - 2 * margin) / (y1 - y0); }
  double px(double x) const { return margin + (x - x0) * sx(); }
  double py(double y) const { return height - margin - (y - y0) * sy(); }
};

inline SvgFrame make_frame(const std::vector<ParetoPoint>& points, ResourceKey key) {
  SvgFrame f;
  f.x0 = f.x1 = resource_of(points.front(), key);
  f.y0 = f.y1 = points.front().error_pct;
  for (const auto& p : points) {
    f.x0 = std::min(f.x0, resource_of(p, key));
    f.x1 = std::max(f.x1, resource_of(p, key));
    f.y0 = std::min(f.y0, p.error_pct);
    f.y1 = std::max(f.y1, p.error_pct);
  }
  const double padx = f.x1 > f.x0 ? 0.05 * (f.x1 - f.x0) : 1.0;
  const double pady = f.y1 > f.y0 ? 0.05 * (f.y1 - f.y0) : 1.0;
  f.x0 -= padx;
  f.x1 += padx;
  f.y0 -= pady;
  f.y1 += pady;
  return f;
}

inline std::string render_svg(const std::vector<ParetoPoint>& points, const std::vector<ParetoPoint>& front,
                              ResourceKey key) {
  if (points.empty()) throw std::invalid_argument("nothing to plot: no points");
  const SvgFrame f = make_frame(points, key);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height << "\" viewBox=\"0 0 "
     << f.width << ' ' << f.height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // axes with end ticks
  os << "<g class=\"axes\" stroke=\"black\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<line x1=\"" << f.margin << "\" y1=\"" << f.height - f.margin << "\" x2=\"" << f.width - f.margin << "\" y2=\""
     << f.height - f.margin << "\"/>\n";
  os << "<line x1=\"" << f.margin << "\" y1=\"" << f.margin << "\" x2=\"" << f.margin << "\" y2=\"" << f.height - f.margin
     << "\"/>\n";
  char buf[64];
  for (double x : {f.x0, f.x1}) {
    std::snprintf(buf, sizeof buf, "%.4g", x);
    os << "<text stroke=\"none\" x=\"" << f.px(x) << "\" y=\"" << f.height - f.margin + 18 << "\" text-anchor=\"middle\">"
       << buf << "</text>\n";
  }
  for (double y : {f.y0, f.y1}) {
    std::snprintf(buf, sizeof buf, "%.4g", y);
    os << "<text stroke=\"none\" x=\"" << f.margin - 6 << "\" y=\"" << f.py(y) + 4 << "\" text-anchor=\"end\">" << buf
       << "</text>\n";
  }
  os << "<text stroke=\"none\" x=\"" << f.width / 2 << "\" y=\"" << f.height - 15 << "\" text-anchor=\"middle\">"
     << to_string(key) << "</text>\n";
  os << "<text stroke=\"none\" x=\"15\" y=\"" << f.height / 2 << "\" transform=\"rotate(-90 15 " << f.height / 2
     << ")\" text-anchor=\"middle\">error (%)</text>\n";
  os << "</g>\n";
  os << "<g class=\"points\" fill=\"steelblue\">\n";
  for (const auto& p : points) {
    os << "<circle cx=\"" << f.px(resource_of(p, key)) << "\" cy=\"" << f.py(p.error_pct) << "\" r=\"4\"><title>" << p.label
       << "</title></circle>\n";
  }
  os << "</g>\n";
  os << "<g transform=\"matrix(" << format_double(f.sx()) << " 0 0 " << format_double(-f.sy()) << ' '
     << format_double(f.margin - f.x0 * f.sx()) << ' ' << format_double(f.height - f.margin + f.y0 * f.sy()) << ")\">\n";
  os << "<polyline id=\"front\" fill=\"none\" stroke=\"crimson\" stroke-width=\"2\" vector-effect=\"non-scaling-stroke\" "
        "points=\"";
  for (std::size_t i = 0; i < front.size(); ++i) {
    if (i) os << ' ';
    os << format_double(resource_of(front[i], key)) << ',' << format_double(front[i].error_pct);
  }
  os << "\"/>\n</g>\n</svg>\n";
  return os.str();
}

inline void emit_plot(const std::vector<ParetoPoint>& points, const std::vector<ParetoPoint>& front, ResourceKey key,
                      const std::filesystem::path& path) {
  const std::string svg = render_svg(points, front, key);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << svg;
}

}  // namespace nash
