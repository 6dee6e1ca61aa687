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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nash/errors.hpp"
#include "nash/tensor.hpp"

namespace nash {

// On-disk layout:
//   <dir>/weights.bin     concatenated little-endian float32 values
//   <dir>/manifest.json   {"schema":"nash.checkpoint","version":1,
//                          "tensors":[{"name","shape","offset"}]}
// `offset` is in bytes from the start of weights.bin. Tensors are written in
// name order.

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_f32le(std::vector<char>& out, float v) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFFu));
}

inline float get_f32le(const unsigned char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(u);
}

}  // namespace detail

inline void save_checkpoint(const std::map<std::string, Tensor>& tensors, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<char> blob;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.size()}});
    for (float v : t.data()) detail::put_f32le(blob, v);
  }
  {
    std::ofstream bin(dir / "weights.bin", std::ios::binary);
    bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!bin) throw std::runtime_error("failed writing " + (dir / "weights.bin").string());
  }
  nlohmann::json manifest{{"schema", "nash.checkpoint"}, {"version", kCheckpointVersion}, {"tensors", entries}};
  std::ofstream js(dir / "manifest.json");
  js << manifest.dump(2) << '\n';
}

inline std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream js(dir / "manifest.json");
  if (!js) throw FormatError("missing checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    js >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("schema", "") != "nash.checkpoint" || manifest.value("version", 0) != kCheckpointVersion) {
    throw FormatError("checkpoint manifest has unknown schema/version");
  }
  std::ifstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw FormatError("missing weights.bin in " + dir.string());
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  std::map<std::string, Tensor> out;
  for (const auto& e : manifest.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::size_t>();
    const std::size_t n = numel(shape);
    if (offset % 4 != 0 || offset + 4 * n > blob.size()) {
      throw FormatError("tensor '" + name + "' extends past end of weights.bin");
    }
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = detail::get_f32le(blob.data() + offset + 4 * i);
    out.emplace(name, Tensor(shape, std::move(data)));
  }
  return out;
}

}  // namespace nash
