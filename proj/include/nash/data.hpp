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
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nash/errors.hpp"
#include "nash/rng.hpp"
#include "nash/tensor.hpp"

namespace nash {

/// Images in NCHW order with values in [0, 1], plus integer labels.
struct Dataset {
  int classes = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> images;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t sample_numel() const noexcept {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(images).subspan(i * sample_numel(), sample_numel());
  }

  void validate() const {
    if (classes < 1 || channels < 1 || height < 1 || width < 1) throw std::invalid_argument("dataset: bad dimensions");
    if (images.size() != labels.size() * sample_numel()) throw std::invalid_argument("dataset: image/label count mismatch");
    for (int l : labels) {
      if (l < 0 || l >= classes) throw std::invalid_argument("dataset: label " + std::to_string(l) + " out of range");
    }
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d{classes, channels, height, width, {}, {}};
    d.images.reserve(idx.size() * sample_numel());
    d.labels.reserve(idx.size());
    for (std::size_t i : idx) {
      d.labels.push_back(labels.at(i));
      const auto img = image(i);
      d.images.insert(d.images.end(), img.begin(), img.end());
    }
    return d;
  }

  /// Stacks the selected samples into an [n, C, H, W] tensor.
  std::pair<Tensor, std::vector<int>> batch(std::span<const std::size_t> idx) const {
    Tensor x({static_cast<int>(idx.size()), channels, height, width});
    std::vector<int> y;
    y.reserve(idx.size());
    auto dst = x.data();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      y.push_back(labels.at(idx[k]));
      const auto img = image(idx[k]);
      std::copy(img.begin(), img.end(), dst.begin() + static_cast<std::ptrdiff_t>(k * sample_numel()));
    }
    return {std::move(x), std::move(y)};
  }
};

/// Fisher-Yates permutation of 0..n-1 driven by `rng`.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// Parses the CIFAR-10 binary layout: per record one label byte followed by
/// 1024 red, 1024 green and 1024 blue bytes (32x32 row-major).
inline Dataset parse_cifar10_bytes(std::span<const unsigned char> bytes) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t complete = bytes.size() / kCifarRecordBytes;
    throw FormatError("CIFAR-10 data is " + std::to_string(bytes.size()) + " bytes; record at offset " +
                      std::to_string(complete * kCifarRecordBytes) + " is truncated");
  }
  Dataset d{10, 3, 32, 32, {}, {}};
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  d.images.resize(n * 3072);
  d.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t off = r * kCifarRecordBytes;
    const int label = bytes[off];
    if (label > 9) {
      throw FormatError("CIFAR-10 label " + std::to_string(label) + " at offset " + std::to_string(off) + " exceeds 9");
    }
    d.labels[r] = label;
    for (std::size_t p = 0; p < 3072; ++p) d.images[r * 3072 + p] = static_cast<float>(bytes[off + 1 + p]) / 255.0f;
  }
  return d;
}

inline Dataset parse_cifar10_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_cifar10_bytes(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Appends the samples of `b` to `a`; dimensions must agree.
inline void append(Dataset& a, const Dataset& b) {
  if (a.size() == 0 && a.images.empty()) {
    a = b;
    return;
  }
  if (a.classes != b.classes || a.channels != b.channels || a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("cannot concatenate datasets of different geometry");
  }
  a.images.insert(a.images.end(), b.images.begin(), b.images.end());
  a.labels.insert(a.labels.end(), b.labels.begin(), b.labels.end());
}

/// Loads every `data_batch_*.bin` (or, with `test`, `test_batch.bin`) in `dir`
/// in name order.
inline Dataset load_cifar10_dir(const std::filesystem::path& dir, bool test = false) {
  if (!std::filesystem::is_directory(dir)) throw FormatError("CIFAR-10 directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    const bool match = test ? name == "test_batch.bin" : name.rfind("data_batch_", 0) == 0 && e.path().extension() == ".bin";
    if (match) files.push_back(e.path());
  }
  if (files.empty()) throw FormatError("no CIFAR-10 batch files in " + dir.string());
  std::sort(files.begin(), files.end());
  Dataset d;
  for (const auto& f : files) append(d, parse_cifar10_bin(f));
  return d;
}

/// Oriented-bar classification task. Class k shows a square-wave grating at
/// angle pi*k/classes, tinted per channel, plus Gaussian noise of std `sigma`.
/// Pixels are clamped to [0, 1] and rounded to 8-bit steps like real images.
inline Dataset synth_dataset(int classes, int n_per_class, int hw, std::uint64_t seed, float sigma = 0.1f,
                             int channels = 3) {
  if (classes < 2 || n_per_class < 1 || hw < 4 || channels < 1) throw std::invalid_argument("synth_dataset: bad sizes");
  if (!(sigma >= 0.0f)) throw std::invalid_argument("synth_dataset: sigma must be non-negative");
  Dataset d{classes, channels, hw, hw, {}, {}};
  const std::size_t per = d.sample_numel();
  std::vector<float> templates(static_cast<std::size_t>(classes) * per);
  const double period = std::max(4.0, hw / 3.0);
  for (int k = 0; k < classes; ++k) {
    const double theta = std::numbers::pi * k / classes;
    const double cx = std::cos(theta), cy = std::sin(theta);
    for (int c = 0; c < channels; ++c) {
      const float tint = 0.6f + 0.4f * static_cast<float>((c + k) % channels) / static_cast<float>(std::max(1, channels - 1));
      for (int y = 0; y < hw; ++y) {
        for (int x = 0; x < hw; ++x) {
          const double u = (x - hw / 2.0) * cx + (y - hw / 2.0) * cy;
          const double phase = u / period - std::floor(u / period);
          const float v = phase < 0.5 ? 0.8f * tint : 0.2f;
          templates[static_cast<std::size_t>(k) * per + (static_cast<std::size_t>(c) * hw + y) * hw + x] = v;
        }
      }
    }
  }
  Rng rng(seed);
  d.images.resize(static_cast<std::size_t>(classes) * n_per_class * per);
  d.labels.resize(static_cast<std::size_t>(classes) * n_per_class);
  std::size_t s = 0;
  for (int i = 0; i < n_per_class; ++i) {
    for (int k = 0; k < classes; ++k, ++s) {
      d.labels[s] = k;
      for (std::size_t p = 0; p < per; ++p) {
        float v = templates[static_cast<std::size_t>(k) * per + p];
        if (sigma > 0.0f) v += sigma * static_cast<float>(rng.normal());
        v = std::clamp(v, 0.0f, 1.0f);
        d.images[s * per + p] = std::nearbyint(v * 255.0f) / 255.0f;
      }
    }
  }
  return d;
}

}  // namespace nash
