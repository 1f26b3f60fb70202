// Copyright 2026 The DBCL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DBCL_DATA_H_
#define DBCL_DATA_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dbcl/linalg.h"

namespace dbcl::data {

// Samples along the batch axis of `features`. Flat datasets use
// (n, dim, 1, 1); images use (n, channels, height, width).
struct Dataset {
  Tensor4 features;
  std::vector<int> labels;
  std::vector<int> property;  // empty unless the generator attaches one
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t feature_dim() const { return features.shape().per_sample(); }
  // Throws DataError if the fields disagree or a label is out of range.
  void validate() const;
};

// IDX image and label files (big-endian header, u8 payload). Pixels are
// scaled to [0, 1]; images become (n, 1, rows, cols).
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes IDX files; used to build fixtures.
void write_idx(const std::string& images_path, const std::string& labels_path,
               std::span<const std::uint8_t> pixels, std::size_t rows, std::size_t cols,
               std::span<const std::uint8_t> labels);

struct BlobsOptions {
  double mu = 2.0;
  int classes = 2;
};
// Unit-variance Gaussian classes. Two classes sit at +-mu along
// (1, ..., 1)/sqrt(dim); with more classes, class k sits at mu * u_k for a
// random unit vector u_k drawn from the seed.
Dataset synth_blobs(std::size_t n, std::size_t dim, std::uint64_t seed, BlobsOptions opts = {});

struct PropertyOptions {
  double mu = 2.0;
  double delta = 1.5;
  double property_rate = 0.5;
  // Coordinates [0, block) carry the label; [block, 2*block) the property.
  std::size_t block = 8;
};
// Binary label from the first coordinate block (shifted by +-mu/sqrt(block)
// per coordinate), and an independent binary property that adds delta to
// every coordinate of the second block.
Dataset synth_property(std::size_t n, std::size_t dim, std::uint64_t seed,
                       PropertyOptions opts = {});

// Samples at the given indices, in order.
Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);
Tensor4 gather_features(const Tensor4& features, std::span<const std::size_t> indices);

// Uniformly random disjoint shards whose sizes differ by at most one.
std::vector<std::vector<std::size_t>> partition_indices(std::size_t n, std::size_t m,
                                                        std::uint64_t seed);
std::vector<Dataset> partition(const Dataset& ds, std::size_t m, std::uint64_t seed);

// First `n` samples after a seeded shuffle, and the rest.
std::pair<Dataset, Dataset> split(const Dataset& ds, std::size_t n, std::uint64_t seed);

}  // namespace dbcl::data

#endif  // DBCL_DATA_H_
