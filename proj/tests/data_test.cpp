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

#include <filesystem>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "nash/data.hpp"

using namespace nash;
namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> record(unsigned char label, unsigned char fill) {
  std::vector<unsigned char> r(kCifarRecordBytes, fill);
  r[0] = label;
  return r;
}

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "nash_data_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST(Cifar10, SingleRecordLabelAndPixels) {
  const Dataset d = parse_cifar10_bytes(record(5, 255));
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.labels[0], 5);
  EXPECT_EQ(d.channels, 3);
  EXPECT_EQ(d.height, 32);
  for (float v : d.image(0)) ASSERT_EQ(v, 1.0f);
}

TEST(Cifar10, ChannelPlanesInOrder) {
  auto r = record(0, 0);
  r[1] = 255;             // red (0,0)
  r[1 + 1024 + 33] = 51;  // green (1,1)
  r[1 + 2048 + 1023] = 102;  // blue (31,31)
  const Dataset d = parse_cifar10_bytes(r);
  const auto img = d.image(0);
  EXPECT_EQ(img[0], 1.0f);
  EXPECT_EQ(img[1024 + 33], 0.2f);
  EXPECT_EQ(img[2048 + 1023], 0.4f);
}

TEST(Cifar10, RecordsKeepFileOrder) {
  auto bytes = record(3, 0);
  const auto second = record(7, 128);
  bytes.insert(bytes.end(), second.begin(), second.end());
  const Dataset d = parse_cifar10_bytes(bytes);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.labels, (std::vector<int>{3, 7}));
  EXPECT_EQ(d.image(0)[0], 0.0f);
  EXPECT_EQ(d.image(1)[0], 128.0f / 255.0f);
}

TEST(Cifar10, TruncatedRecordIsAFormatError) {
  const std::vector<unsigned char> short_record(3072, 0);
  EXPECT_THROW(parse_cifar10_bytes(short_record), FormatError);
  auto bytes = record(1, 0);
  bytes.push_back(2);
  EXPECT_THROW(parse_cifar10_bytes(bytes), FormatError);
}

TEST(Cifar10, LabelAboveNineIsAFormatError) { EXPECT_THROW(parse_cifar10_bytes(record(10, 0)), FormatError); }

TEST(Cifar10, DirectoryLoadsBatchesInNameOrder) {
  const auto dir = temp_dir("cifar");
  write_bytes(dir / "data_batch_2.bin", record(2, 0));
  write_bytes(dir / "data_batch_1.bin", record(1, 0));
  write_bytes(dir / "test_batch.bin", record(9, 0));
  write_bytes(dir / "readme.txt", {1, 2, 3});
  const Dataset train = load_cifar10_dir(dir);
  EXPECT_EQ(train.labels, (std::vector<int>{1, 2}));
  const Dataset test = load_cifar10_dir(dir, true);
  EXPECT_EQ(test.labels, (std::vector<int>{9}));
  EXPECT_THROW(load_cifar10_dir(temp_dir("empty")), FormatError);
  EXPECT_THROW(load_cifar10_dir(temp_dir("empty") / "absent"), FormatError);
}

TEST(Synth, DeterministicPerSeed) {
  const Dataset a = synth_dataset(4, 5, 16, 3), b = synth_dataset(4, 5, 16, 3), c = synth_dataset(4, 5, 16, 4);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.images, c.images);
}

TEST(Synth, ShapesLabelsAndRange) {
  const Dataset d = synth_dataset(5, 3, 12, 1, 0.3f, 2);
  EXPECT_EQ(d.size(), 15u);
  EXPECT_EQ(d.sample_numel(), 2u * 12u * 12u);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(std::count(d.labels.begin(), d.labels.end(), k), 3);
  for (float v : d.images) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
    ASSERT_EQ(std::nearbyint(v * 255.0f), v * 255.0f);
  }
  EXPECT_THROW(synth_dataset(1, 3, 12, 1), std::invalid_argument);
  EXPECT_THROW(synth_dataset(4, 3, 12, 1, -0.1f), std::invalid_argument);
}

TEST(Synth, ZeroNoiseSamplesMatchTheirClassTemplate) {
  const Dataset d = synth_dataset(4, 6, 16, 2, 0.0f);
  for (std::size_t i = 4; i < d.size(); ++i) {
    const auto a = d.image(i), b = d.image(i % 4);
    ASSERT_EQ(d.labels[i], d.labels[i % 4]);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
  // classes differ from each other
  for (std::size_t k = 1; k < 4; ++k) {
    const auto a = d.image(0), b = d.image(k);
    EXPECT_FALSE(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST(Synth, NearestCentroidProbeSeparatesClasses) {
  const Dataset train = synth_dataset(4, 40, 16, 11), test = synth_dataset(4, 25, 16, 12);
  const std::size_t per = train.sample_numel();
  std::vector<double> centroid(4 * per, 0.0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto img = train.image(i);
    for (std::size_t p = 0; p < per; ++p) centroid[static_cast<std::size_t>(train.labels[i]) * per + p] += img[p] / 40.0;
  }
  int correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto img = test.image(i);
    int best = 0;
    double best_d = 1e300;
    for (int k = 0; k < 4; ++k) {
      double dist = 0.0;
      for (std::size_t p = 0; p < per; ++p) {
        const double e = img[p] - centroid[static_cast<std::size_t>(k) * per + p];
        dist += e * e;
      }
      if (dist < best_d) {
        best_d = dist;
        best = k;
      }
    }
    if (best == test.labels[i]) ++correct;
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(test.size()), 0.8);
}

TEST(DatasetOps, SubsetBatchAndValidate) {
  const Dataset d = synth_dataset(3, 2, 8, 1);
  const std::vector<std::size_t> idx{4, 1};
  const Dataset s = d.subset(idx);
  EXPECT_EQ(s.labels, (std::vector<int>{d.labels[4], d.labels[1]}));
  const auto [x, y] = d.batch(idx);
  EXPECT_EQ(x.shape(), (Shape{2, 3, 8, 8}));
  EXPECT_EQ(y, s.labels);
  Dataset bad = d;
  bad.labels[0] = 7;
  EXPECT_ANY_THROW(bad.validate());
}

TEST(DatasetOps, OutOfRangeIndexThrows) {
  const Dataset d = synth_dataset(2, 2, 8, 1);
  const std::vector<std::size_t> idx{4};
  EXPECT_THROW(d.subset(idx), std::out_of_range);
  EXPECT_THROW(d.batch(idx), std::out_of_range);
}
