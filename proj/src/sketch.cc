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

#include "dbcl/sketch.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "dbcl/errors.h"
#include "dbcl/rng.h"

namespace dbcl::sketch {
namespace {

std::int8_t sign_from_word(std::uint64_t word) { return (word & 1U) != 0 ? 1 : -1; }

void require_cols(const Matrix& m, std::size_t expected, const char* op) {
  if (m.cols() != expected) {
    throw DimensionError(std::string(op) + ": input has " + std::to_string(m.cols()) +
                         " columns, sketch expects " + std::to_string(expected));
  }
}

}  // namespace

std::string_view to_string(SketchKind kind) {
  switch (kind) {
    case SketchKind::kCountSketch:
      return "countsketch";
    case SketchKind::kUniformSampling:
      return "uniform_sampling";
    case SketchKind::kPermutedCountSketch:
      return "permuted_countsketch";
  }
  return "unknown";
}

SketchKind parse_sketch_kind(std::string_view name) {
  if (name == "countsketch") return SketchKind::kCountSketch;
  if (name == "uniform_sampling") return SketchKind::kUniformSampling;
  if (name == "permuted_countsketch") return SketchKind::kPermutedCountSketch;
  throw InvalidSpecError("unknown sketch kind '" + std::string(name) + "'");
}

SketchDescriptor SketchDescriptor::countsketch(std::size_t d, std::size_t s) {
  return {SketchKind::kCountSketch, d, s, 0};
}

SketchDescriptor SketchDescriptor::uniform_sampling(std::size_t d, std::size_t s) {
  return {SketchKind::kUniformSampling, d, s, 0};
}

SketchDescriptor SketchDescriptor::permuted(std::size_t d, std::size_t q) {
  return {SketchKind::kPermutedCountSketch, d, q == 0 ? 0 : d / q, q};
}

SketchDescriptor SketchDescriptor::with_compression(SketchKind kind, std::size_t d,
                                                    std::size_t q) {
  if (q < 2) throw InvalidSpecError("compression q must be >= 2, got " + std::to_string(q));
  if (kind == SketchKind::kPermutedCountSketch) return permuted(d, q);
  return {kind, d, d / q, 0};
}

SketchMatrix SketchMatrix::from_hashing(std::size_t s, std::vector<std::int32_t> bucket,
                                        std::vector<std::int8_t> sign) {
  if (s == 0) throw InvalidSpecError("sketch size must be positive");
  if (bucket.size() != sign.size()) {
    throw DimensionError("from_hashing: bucket and sign tables differ in length");
  }
  for (std::size_t i = 0; i < bucket.size(); ++i) {
    if (bucket[i] < 0 || static_cast<std::size_t>(bucket[i]) >= s) {
      throw InvalidSpecError("from_hashing: bucket out of range at row " + std::to_string(i));
    }
    if (sign[i] != 1 && sign[i] != -1) {
      throw InvalidSpecError("from_hashing: sign must be +1 or -1 at row " + std::to_string(i));
    }
  }
  SketchMatrix m;
  m.kind_ = SketchKind::kCountSketch;
  m.d_ = bucket.size();
  m.s_ = s;
  m.bucket_ = std::move(bucket);
  m.sign_ = std::move(sign);
  return m;
}

SketchMatrix SketchMatrix::from_sampling(std::size_t d, std::vector<std::int32_t> source) {
  if (source.empty()) throw InvalidSpecError("sketch size must be positive");
  for (std::int32_t src : source) {
    if (src < 0 || static_cast<std::size_t>(src) >= d) {
      throw InvalidSpecError("from_sampling: source index out of range");
    }
  }
  SketchMatrix m;
  m.kind_ = SketchKind::kUniformSampling;
  m.d_ = d;
  m.s_ = source.size();
  m.scale_ = std::sqrt(static_cast<double>(d) / static_cast<double>(m.s_));
  m.source_ = std::move(source);
  return m;
}

std::vector<std::size_t> SketchMatrix::dropped() const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < bucket_.size(); ++i)
    if (bucket_[i] < 0) rows.push_back(i);
  return rows;
}

std::vector<std::size_t> SketchMatrix::bucket_sizes() const {
  std::vector<std::size_t> sizes(s_, 0);
  if (kind_ == SketchKind::kUniformSampling) {
    std::fill(sizes.begin(), sizes.end(), 1);
    return sizes;
  }
  for (std::int32_t b : bucket_)
    if (b >= 0) ++sizes[static_cast<std::size_t>(b)];
  return sizes;
}

SketchMatrix generate(const SketchSpec& spec) {
  const SketchDescriptor& desc = spec.desc;
  const std::size_t d = desc.d;
  Rng rng(spec.seed);
  SketchMatrix m;
  m.kind_ = desc.kind;
  m.d_ = d;

  switch (desc.kind) {
    case SketchKind::kCountSketch: {
      if (desc.s == 0 || desc.s >= d) {
        throw InvalidSpecError("countsketch requires 0 < s < d (d=" + std::to_string(d) +
                               ", s=" + std::to_string(desc.s) + ")");
      }
      m.s_ = desc.s;
      m.bucket_.resize(d);
      m.sign_.resize(d);
      for (std::size_t i = 0; i < d; ++i) {
        m.bucket_[i] = static_cast<std::int32_t>(rng.below(desc.s));
        m.sign_[i] = sign_from_word(rng.next());
      }
      return m;
    }
    case SketchKind::kUniformSampling: {
      if (desc.s == 0 || desc.s >= d) {
        throw InvalidSpecError("uniform sampling requires 0 < s < d (d=" +
                               std::to_string(d) + ", s=" + std::to_string(desc.s) + ")");
      }
      m.s_ = desc.s;
      m.scale_ = std::sqrt(static_cast<double>(d) / static_cast<double>(desc.s));
      m.source_.resize(desc.s);
      for (std::size_t j = 0; j < desc.s; ++j)
        m.source_[j] = static_cast<std::int32_t>(rng.below(d));
      return m;
    }
    case SketchKind::kPermutedCountSketch: {
      if (desc.q < 2 || d / desc.q == 0) {
        throw InvalidSpecError("permuted countsketch requires q >= 2 and d >= q (d=" +
                               std::to_string(d) + ", q=" + std::to_string(desc.q) + ")");
      }
      const std::size_t s = d / desc.q;
      m.s_ = s;
      std::vector<std::int32_t> perm(d);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = d - 1; i >= 1; --i) {
        const std::size_t j = rng.below(i + 1);
        std::swap(perm[i], perm[j]);
      }
      m.bucket_.assign(d, -1);
      for (std::size_t r = 0; r < desc.q; ++r)
        for (std::size_t h = 0; h < s; ++h)
          m.bucket_[static_cast<std::size_t>(perm[r * s + h])] = static_cast<std::int32_t>(h);
      m.sign_.resize(d);
      for (std::size_t i = 0; i < d; ++i) m.sign_[i] = sign_from_word(rng.next());
      return m;
    }
  }
  throw InvalidSpecError("unknown sketch kind");
}

SketchPtr make_sketch(const SketchSpec& spec) {
  return std::make_shared<const SketchMatrix>(generate(spec));
}

Matrix apply(const Matrix& a, const SketchMatrix& sketch) {
  require_cols(a, sketch.d(), "apply");
  Matrix out(a.rows(), sketch.s());
  if (sketch.kind() == SketchKind::kUniformSampling) {
    const double scale = sketch.scale();
    const auto src = sketch.sources();
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const auto in = a.row(r);
      auto o = out.row(r);
      for (std::size_t j = 0; j < src.size(); ++j)
        o[j] = scale * in[static_cast<std::size_t>(src[j])];
    }
    return out;
  }
  const auto bucket = sketch.buckets();
  const auto sign = sketch.signs();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* in = a.row(r).data();
    double* o = out.row(r).data();
    for (std::size_t i = 0; i < bucket.size(); ++i) {
      const std::int32_t b = bucket[i];
      if (b < 0) continue;
      o[b] += sign[i] > 0 ? in[i] : -in[i];
    }
  }
  return out;
}

Matrix apply_transpose(const Matrix& c, const SketchMatrix& sketch) {
  require_cols(c, sketch.s(), "apply_transpose");
  Matrix out(c.rows(), sketch.d());
  if (sketch.kind() == SketchKind::kUniformSampling) {
    const double scale = sketch.scale();
    const auto src = sketch.sources();
    for (std::size_t r = 0; r < c.rows(); ++r) {
      const auto in = c.row(r);
      auto o = out.row(r);
      for (std::size_t j = 0; j < src.size(); ++j)
        o[static_cast<std::size_t>(src[j])] += scale * in[j];
    }
    return out;
  }
  const auto bucket = sketch.buckets();
  const auto sign = sketch.signs();
  for (std::size_t r = 0; r < c.rows(); ++r) {
    const double* in = c.row(r).data();
    double* o = out.row(r).data();
    for (std::size_t i = 0; i < bucket.size(); ++i) {
      const std::int32_t b = bucket[i];
      if (b < 0) continue;
      o[i] = sign[i] > 0 ? in[b] : -in[b];
    }
  }
  return out;
}

Matrix apply_pinv(const Matrix& c, const SketchMatrix& sketch) {
  if (!sketch.is_countsketch()) {
    throw UnsupportedKindError("apply_pinv is defined for CountSketch kinds only");
  }
  require_cols(c, sketch.s(), "apply_pinv");
  const auto sizes = sketch.bucket_sizes();
  Matrix scaled = c;
  for (std::size_t r = 0; r < scaled.rows(); ++r) {
    auto row = scaled.row(r);
    for (std::size_t j = 0; j < row.size(); ++j)
      row[j] = sizes[j] == 0 ? 0.0 : row[j] / static_cast<double>(sizes[j]);
  }
  return apply_transpose(scaled, sketch);
}

Matrix materialize(const SketchMatrix& sketch) {
  Matrix dense(sketch.d(), sketch.s());
  if (sketch.kind() == SketchKind::kUniformSampling) {
    for (std::size_t j = 0; j < sketch.s(); ++j)
      dense(static_cast<std::size_t>(sketch.source(j)), j) += sketch.scale();
    return dense;
  }
  for (std::size_t i = 0; i < sketch.d(); ++i) {
    const std::int32_t b = sketch.bucket(i);
    if (b >= 0) dense(i, static_cast<std::size_t>(b)) = sketch.sign(i);
  }
  return dense;
}

double product_error_expectation(const Matrix& a, const Matrix& b, std::size_t s) {
  if (a.cols() != b.cols()) {
    throw DimensionError("product_error_expectation: A has " + std::to_string(a.cols()) +
                         " columns, B has " + std::to_string(b.cols()));
  }
  if (s == 0) throw InvalidSpecError("product_error_expectation: s must be positive");
  const std::size_t d = a.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto br = b.row(j);
      double a2 = 0.0, b2 = 0.0, ab = 0.0, a2b2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        a2 += ar[k] * ar[k];
        b2 += br[k] * br[k];
        ab += ar[k] * br[k];
        a2b2 += ar[k] * ar[k] * br[k] * br[k];
      }
      // sum_{k != l} a_k^2 b_l^2 + sum_{k != l} a_k b_k a_l b_l
      total += (a2 * b2 - a2b2) + (ab * ab - a2b2);
    }
  }
  return total / static_cast<double>(s);
}

}  // namespace dbcl::sketch
