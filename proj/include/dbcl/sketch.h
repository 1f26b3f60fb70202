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

#ifndef DBCL_SKETCH_H_
#define DBCL_SKETCH_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "dbcl/linalg.h"

namespace dbcl::sketch {

enum class SketchKind : std::uint8_t {
  // Independent (bucket, sign) per row.
  kCountSketch = 0,
  // s columns drawn with replacement from {sqrt(d/s) e_i}.
  kUniformSampling = 1,
  // Random permutation dealt into s = floor(d/q) buckets of q rows each; the
  // d - s*q leftover rows map nowhere.
  kPermutedCountSketch = 2,
};

std::string_view to_string(SketchKind kind);
// Accepts "countsketch", "uniform_sampling", "permuted_countsketch".
SketchKind parse_sketch_kind(std::string_view name);

// Everything needed to regenerate a sketch except its seed. For the permuted
// kind, q is authoritative and s is derived as floor(d/q).
struct SketchDescriptor {
  SketchKind kind = SketchKind::kCountSketch;
  std::size_t d = 0;
  std::size_t s = 0;
  std::size_t q = 0;

  static SketchDescriptor countsketch(std::size_t d, std::size_t s);
  static SketchDescriptor uniform_sampling(std::size_t d, std::size_t s);
  static SketchDescriptor permuted(std::size_t d, std::size_t q);
  // Sketch of size floor(d/q) of the given kind.
  static SketchDescriptor with_compression(SketchKind kind, std::size_t d, std::size_t q);

  bool operator==(const SketchDescriptor&) const = default;
};

struct SketchSpec {
  SketchDescriptor desc;
  std::uint64_t seed = 0;
};

// Implicit d x s sketching matrix S. Only hashing/sampling tables are stored.
class SketchMatrix {
 public:
  // CountSketch with an explicit hashing table. Unlike generate(), any s >= 1
  // is accepted, which admits the full-rank s = d sketches used in tests.
  static SketchMatrix from_hashing(std::size_t s, std::vector<std::int32_t> bucket,
                                   std::vector<std::int8_t> sign);
  // Uniform sampling with explicit source indices (one per column).
  static SketchMatrix from_sampling(std::size_t d, std::vector<std::int32_t> source);

  SketchKind kind() const { return kind_; }
  std::size_t d() const { return d_; }
  std::size_t s() const { return s_; }
  bool is_countsketch() const { return kind_ != SketchKind::kUniformSampling; }

  // CountSketch kinds: bucket of row i, or -1 if the row is dropped.
  std::int32_t bucket(std::size_t i) const { return bucket_[i]; }
  std::int8_t sign(std::size_t i) const { return sign_[i]; }
  std::span<const std::int32_t> buckets() const { return bucket_; }
  std::span<const std::int8_t> signs() const { return sign_; }
  // Rows hashed to no bucket (permuted kind with q not dividing d).
  std::vector<std::size_t> dropped() const;
  // Number of rows hashed to each bucket; all ones for uniform sampling.
  std::vector<std::size_t> bucket_sizes() const;

  // Uniform sampling: source row of column j and the common scale sqrt(d/s).
  std::int32_t source(std::size_t j) const { return source_[j]; }
  std::span<const std::int32_t> sources() const { return source_; }
  double scale() const { return scale_; }

  bool operator==(const SketchMatrix&) const = default;

 private:
  friend SketchMatrix generate(const SketchSpec& spec);

  SketchKind kind_ = SketchKind::kCountSketch;
  std::size_t d_ = 0;
  std::size_t s_ = 0;
  std::vector<std::int32_t> bucket_;
  std::vector<std::int8_t> sign_;
  std::vector<std::int32_t> source_;
  double scale_ = 1.0;
};

using SketchPtr = std::shared_ptr<const SketchMatrix>;

// Deterministic in spec.seed. The order in which random words are consumed is
// fixed so that independent implementations agree bit for bit:
//   countsketch: per row i, bucket = next % s, then sign = next & 1 ? +1 : -1.
//   uniform sampling: per column j, source = next % d.
//   permuted: Fisher-Yates over 0..d-1 (i from d-1 down to 1, j = next % (i+1)),
//     first s*q entries dealt row-major into a q x s table whose column h lists
//     bucket h; then one sign draw per row in ascending row order.
SketchMatrix generate(const SketchSpec& spec);
SketchPtr make_sketch(const SketchSpec& spec);

// a * S in O(rows * d) for the CountSketch kinds.
Matrix apply(const Matrix& a, const SketchMatrix& sketch);
// c * S^T. Dropped rows of S give zero columns.
Matrix apply_transpose(const Matrix& c, const SketchMatrix& sketch);
// c * pinv(S) = c * diag(1/n_j) * S^T with n_j the bucket sizes; empty buckets
// contribute nothing. CountSketch kinds only.
Matrix apply_pinv(const Matrix& c, const SketchMatrix& sketch);
// Dense d x s copy of S. Intended for tests and small inspection only.
Matrix materialize(const SketchMatrix& sketch);

// Exact E ||A S S^T B^T - A B^T||_F^2 over CountSketch randomness with s
// buckets:
//   (1/s) sum_{i,j} ( sum_{k != l} a_ik^2 b_jl^2 + sum_{k != l} a_ik b_jk a_il b_jl ).
double product_error_expectation(const Matrix& a, const Matrix& b, std::size_t s);

}  // namespace dbcl::sketch

#endif  // DBCL_SKETCH_H_
