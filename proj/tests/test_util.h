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

#ifndef DBCL_TESTS_TEST_UTIL_H_
#define DBCL_TESTS_TEST_UTIL_H_

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "dbcl/linalg.h"
#include "dbcl/rng.h"
#include "dbcl/sketch.h"

namespace dbcl::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

// Integer entries in [-range, range]; keeps enumeration identities exact.
inline Matrix random_int_matrix(std::size_t rows, std::size_t cols, int range, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) {
    v = static_cast<double>(static_cast<int>(rng.below(2 * range + 1)) - range);
  }
  return m;
}

inline Tensor4 random_tensor(Shape4 shape, Rng& rng) {
  Tensor4 t(shape);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  }
  return c;
}

inline Matrix naive_transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// Dense d x s matrix built directly from a hashing table, independent of
// sketch::materialize.
inline Matrix dense_from_hashing(std::size_t s, const std::vector<std::int32_t>& bucket,
                                 const std::vector<std::int8_t>& sign) {
  Matrix m(bucket.size(), s);
  for (std::size_t i = 0; i < bucket.size(); ++i) {
    if (bucket[i] >= 0) m(i, static_cast<std::size_t>(bucket[i])) = sign[i];
  }
  return m;
}

// Every CountSketch with d rows and s buckets: s^d bucket assignments times
// 2^d sign patterns, each equally likely.
inline void for_each_countsketch(std::size_t d, std::size_t s,
                                 const std::function<void(const sketch::SketchMatrix&)>& fn) {
  std::size_t bucket_count = 1;
  for (std::size_t i = 0; i < d; ++i) bucket_count *= s;
  const std::size_t sign_count = std::size_t{1} << d;
  for (std::size_t bcode = 0; bcode < bucket_count; ++bcode) {
    std::vector<std::int32_t> bucket(d);
    std::size_t rest = bcode;
    for (std::size_t i = 0; i < d; ++i) {
      bucket[i] = static_cast<std::int32_t>(rest % s);
      rest /= s;
    }
    for (std::size_t scode = 0; scode < sign_count; ++scode) {
      std::vector<std::int8_t> sign(d);
      for (std::size_t i = 0; i < d; ++i) sign[i] = (scode >> i) & 1 ? -1 : 1;
      fn(sketch::SketchMatrix::from_hashing(s, bucket, sign));
    }
  }
}

inline std::size_t countsketch_count(std::size_t d, std::size_t s) {
  std::size_t n = std::size_t{1} << d;
  for (std::size_t i = 0; i < d; ++i) n *= s;
  return n;
}

// Full-rank identity sketch: row i -> bucket i, sign +1.
inline sketch::SketchPtr identity_sketch(std::size_t d) {
  std::vector<std::int32_t> bucket(d);
  for (std::size_t i = 0; i < d; ++i) bucket[i] = static_cast<std::int32_t>(i);
  return std::make_shared<const sketch::SketchMatrix>(
      sketch::SketchMatrix::from_hashing(d, bucket, std::vector<std::int8_t>(d, 1)));
}

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

// Central difference of f with respect to v[index].
inline double central_difference(const std::function<double()>& f, double& v, double eps) {
  const double saved = v;
  v = saved + eps;
  const double up = f();
  v = saved - eps;
  const double down = f();
  v = saved;
  return (up - down) / (2.0 * eps);
}

}  // namespace dbcl::testing

#endif  // DBCL_TESTS_TEST_UTIL_H_
