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

#include "dbcl/data.h"

#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "dbcl/errors.h"
#include "dbcl/rng.h"

namespace dbcl::data {
namespace {

constexpr std::uint32_t kImageMagic = 2051;
constexpr std::uint32_t kLabelMagic = 2049;

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const std::string& path) {
  if (offset + 4 > bytes.size()) throw DataError(path + ": truncated header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

void Dataset::validate() const {
  if (features.shape().batch != labels.size()) {
    throw DataError("dataset has " + std::to_string(features.shape().batch) + " feature rows but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (!property.empty() && property.size() != labels.size()) {
    throw DataError("dataset property flags do not match the sample count");
  }
  for (int l : labels) {
    if (l < 0 || l >= num_classes) {
      throw DataError("label " + std::to_string(l) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);
  if (const auto magic = read_be32(images, 0, images_path); magic != kImageMagic) {
    throw DataError(images_path + ": wrong magic " + std::to_string(magic) + ", expected 2051");
  }
  if (const auto magic = read_be32(labels, 0, labels_path); magic != kLabelMagic) {
    throw DataError(labels_path + ": wrong magic " + std::to_string(magic) + ", expected 2049");
  }
  const std::size_t n = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t n_labels = read_be32(labels, 4, labels_path);
  if (n != n_labels) {
    throw DataError("image count " + std::to_string(n) + " does not match label count " +
                    std::to_string(n_labels));
  }
  const std::size_t pixels = n * rows * cols;
  if (images.size() < 16 + pixels) throw DataError(images_path + ": truncated payload");
  if (labels.size() < 8 + n) throw DataError(labels_path + ": truncated payload");

  Dataset ds;
  ds.features = Tensor4({n, 1, rows, cols});
  auto out = ds.features.data();
  for (std::size_t i = 0; i < pixels; ++i) out[i] = images[16 + i] / 255.0;
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = labels[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = std::max(10, max_label + 1);
  return ds;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               std::span<const std::uint8_t> pixels, std::size_t rows, std::size_t cols,
               std::span<const std::uint8_t> labels) {
  if (pixels.size() != labels.size() * rows * cols) {
    throw DataError("write_idx: pixel count does not match labels x rows x cols");
  }
  std::vector<std::uint8_t> img;
  put_be32(img, kImageMagic);
  put_be32(img, static_cast<std::uint32_t>(labels.size()));
  put_be32(img, static_cast<std::uint32_t>(rows));
  put_be32(img, static_cast<std::uint32_t>(cols));
  img.insert(img.end(), pixels.begin(), pixels.end());
  std::vector<std::uint8_t> lab;
  put_be32(lab, kLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(labels.size()));
  lab.insert(lab.end(), labels.begin(), labels.end());
  write_file(images_path, img);
  write_file(labels_path, lab);
}

Dataset synth_blobs(std::size_t n, std::size_t dim, std::uint64_t seed, BlobsOptions opts) {
  if (n < 2 || dim < 2) throw ConfigError("synth blobs: need n >= 2 and dim >= 2");
  if (opts.classes < 2) throw ConfigError("synth blobs: need at least 2 classes");
  Rng rng(seed);
  const auto k = static_cast<std::size_t>(opts.classes);
  Matrix means(k, dim);
  if (k == 2) {
    const double c = opts.mu / std::sqrt(static_cast<double>(dim));
    for (std::size_t j = 0; j < dim; ++j) {
      means(0, j) = -c;
      means(1, j) = c;
    }
  } else {
    for (std::size_t c = 0; c < k; ++c) {
      double norm_sq = 0.0;
      for (double& v : means.row(c)) {
        v = rng.normal();
        norm_sq += v * v;
      }
      const double scale = opts.mu / std::sqrt(norm_sq);
      for (double& v : means.row(c)) v *= scale;
    }
  }
  Dataset ds;
  ds.num_classes = opts.classes;
  ds.features = Tensor4({n, dim, 1, 1});
  ds.labels.resize(n);
  auto x = ds.features.data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::size_t>(rng.below(k));
    ds.labels[i] = static_cast<int>(label);
    for (std::size_t j = 0; j < dim; ++j) x[i * dim + j] = means(label, j) + rng.normal();
  }
  return ds;
}

Dataset synth_property(std::size_t n, std::size_t dim, std::uint64_t seed, PropertyOptions opts) {
  if (n < 2 || dim < 2) throw ConfigError("synth property: need n >= 2 and dim >= 2");
  if (opts.block == 0 || 2 * opts.block > dim) {
    throw ConfigError("synth property: dim must hold two coordinate blocks of " +
                      std::to_string(opts.block));
  }
  Rng rng(seed);
  Dataset ds;
  ds.num_classes = 2;
  ds.features = Tensor4({n, dim, 1, 1});
  ds.labels.resize(n);
  ds.property.resize(n);
  const double shift = opts.mu / std::sqrt(static_cast<double>(opts.block));
  auto x = ds.features.data();
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(rng.below(2));
    const int p = rng.uniform() < opts.property_rate ? 1 : 0;
    ds.labels[i] = y;
    ds.property[i] = p;
    double* row = x.data() + i * dim;
    for (std::size_t j = 0; j < dim; ++j) row[j] = rng.normal();
    for (std::size_t j = 0; j < opts.block; ++j) {
      row[j] += shift * (2 * y - 1);
      row[opts.block + j] += opts.delta * p;
    }
  }
  return ds;
}

Tensor4 gather_features(const Tensor4& features, std::span<const std::size_t> indices) {
  Shape4 shape = features.shape();
  const std::size_t per = shape.per_sample();
  const std::size_t n = shape.batch;
  shape.batch = indices.size();
  Tensor4 out(shape);
  auto dst = out.data();
  const auto src = features.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= n) throw DimensionError("sample index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[r] * per), per,
                dst.begin() + static_cast<std::ptrdiff_t>(r * per));
  }
  return out;
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.features = gather_features(ds.features, indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(ds.labels[i]);
  if (!ds.property.empty()) {
    out.property.reserve(indices.size());
    for (std::size_t i : indices) out.property.push_back(ds.property[i]);
  }
  return out;
}

std::vector<std::vector<std::size_t>> partition_indices(std::size_t n, std::size_t m,
                                                        std::uint64_t seed) {
  if (m == 0) throw ConfigError("partition: need at least one shard");
  if (m > n) {
    throw ConfigError("partition: " + std::to_string(m) + " shards for " + std::to_string(n) +
                      " samples");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle(order, rng);
  std::vector<std::vector<std::size_t>> shards(m);
  for (std::size_t i = 0; i < n; ++i) shards[i % m].push_back(order[i]);
  return shards;
}

std::vector<Dataset> partition(const Dataset& ds, std::size_t m, std::uint64_t seed) {
  std::vector<Dataset> out;
  for (const auto& idx : partition_indices(ds.size(), m, seed)) out.push_back(subset(ds, idx));
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n > ds.size()) throw ConfigError("split: requested more samples than available");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle(order, rng);
  const std::span<const std::size_t> all(order);
  return {subset(ds, all.first(n)), subset(ds, all.subspan(n))};
}

}  // namespace dbcl::data
