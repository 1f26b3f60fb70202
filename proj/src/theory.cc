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

#include "dbcl/theory.h"

#include <algorithm>
#include <cmath>

#include "dbcl/attack.h"
#include "dbcl/rng.h"

namespace dbcl::theory {
namespace {

using sketch::SketchMatrix;

Matrix random_int(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = static_cast<double>(static_cast<int>(rng.below(9)) - 4);
  return m;
}

Matrix random_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

double max_abs(const Matrix& m) {
  double r = 0.0;
  for (double v : m.data()) r = std::max(r, std::abs(v));
  return r;
}

Matrix project(const Matrix& w, const SketchMatrix& s) {
  return sketch::apply_transpose(sketch::apply(w, s), s);
}

constexpr std::pair<std::size_t, std::size_t> kTiny[] = {{2, 1}, {3, 1}, {3, 2}};

std::string tag(const char* name, std::size_t d, std::size_t s) {
  return std::string(name) + " d=" + std::to_string(d) + " s=" + std::to_string(s);
}

}  // namespace

void for_each_countsketch(std::size_t d, std::size_t s,
                          const std::function<void(const SketchMatrix&)>& fn) {
  std::size_t buckets = 1;
  for (std::size_t i = 0; i < d; ++i) buckets *= s;
  for (std::size_t code = 0; code < buckets; ++code) {
    std::vector<std::int32_t> bucket(d);
    for (std::size_t i = 0, rest = code; i < d; ++i, rest /= s) {
      bucket[i] = static_cast<std::int32_t>(rest % s);
    }
    for (std::size_t signs = 0; signs < (std::size_t{1} << d); ++signs) {
      std::vector<std::int8_t> sign(d);
      for (std::size_t i = 0; i < d; ++i) sign[i] = (signs >> i) & 1 ? -1 : 1;
      fn(SketchMatrix::from_hashing(s, bucket, sign));
    }
  }
}

std::vector<Check> run_suite(std::uint64_t seed, std::size_t trials) {
  std::vector<Check> out;
  Rng rng(seed);
  constexpr int kInstances = 20;

  for (auto [d, s] : kTiny) {
    double product = 0.0, bias = 0.0, thm = 0.0;
    for (int inst = 0; inst < kInstances; ++inst) {
      const Matrix w_old = random_int(2, d, rng);
      const Matrix w_new = random_int(2, d, rng);
      const Matrix v = random_int(2, d, rng);
      const Matrix delta = w_old - w_new;
      const Matrix delta_vt = matmul_nt(delta, v);

      double single = 0.0;
      std::size_t n1 = 0;
      for_each_countsketch(d, s, [&](const SketchMatrix& sk) {
        single += frobenius_norm_sq(matmul_nt(project(w_old, sk), v) - matmul_nt(w_old, v));
        ++n1;
      });
      product = std::max(product, std::abs(single / static_cast<double>(n1) -
                                       sketch::product_error_expectation(w_old, v, s)));

      Matrix mean(2, d);
      double err = 0.0;
      std::size_t n2 = 0;
      for_each_countsketch(d, s, [&](const SketchMatrix& so) {
        const Matrix po = project(w_old, so);
        for_each_countsketch(d, s, [&](const SketchMatrix& sn) {
          const Matrix est = po - project(w_new, sn);
          mean += est;
          err += frobenius_norm_sq(matmul_nt(est, v) - delta_vt);
          ++n2;
        });
      });
      mean *= 1.0 / static_cast<double>(n2);
      bias = std::max(bias, max_abs(mean - delta));
      thm = std::max(thm, std::abs(err / static_cast<double>(n2) -
                                   attack::expected_error_exact(w_old, w_new, v, s)));
    }
    out.push_back({tag("product error enumeration", d, s), product <= 1e-10, product, 0.0, 1e-10});
    out.push_back({tag("option1 unbiased", d, s), bias <= 1e-10, bias, 0.0, 1e-10});
    out.push_back({tag("estimate error enumeration", d, s), thm <= 1e-10, thm, 0.0, 1e-10});
  }

  double closed = 0.0;
  for (int inst = 0; inst < kInstances; ++inst) {
    const std::size_t d = 4 + rng.below(13);
    const std::size_t s = 1 + rng.below(d - 1);
    const Matrix w_old = random_normal(3, d, rng);
    const Matrix w_new = random_normal(3, d, rng);
    closed = std::max(closed, std::abs(attack::expected_error_exact(w_old, w_new,
                                                                    Matrix::identity(d), s) -
                                       attack::expected_error_identity(w_old, w_new, s)));
  }
  out.push_back({"identity closed form", closed <= 1e-10, closed, 0.0, 1e-10});

  for (std::size_t d : {64, 128}) {
    const Matrix w_old = random_normal(4, d, rng);
    const Matrix w_new = random_normal(4, d, rng);
    const double norms = frobenius_norm_sq(w_old) + frobenius_norm_sq(w_new);
    std::vector<double> xs, ys;
    for (std::size_t f : {2, 4, 8}) {
      const std::size_t s = d / f;
      const attack::MonteCarloResult mc =
          attack::monte_carlo_error_identity(w_old, w_new, s, trials, rng.next());
      const double expect = attack::expected_error_identity(w_old, w_new, s);
      const double gap = std::abs(mc.mean - expect);
      out.push_back({tag("monte carlo", d, s), gap <= 4.0 * mc.stderr_, mc.mean, expect,
                     4.0 * mc.stderr_});
      xs.push_back(static_cast<double>(f));
      ys.push_back(mc.mean / norms);
    }
    const double mx = (xs[0] + xs[1] + xs[2]) / 3.0;
    const double my = (ys[0] + ys[1] + ys[2]) / 3.0;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      sxy += (xs[i] - mx) * (ys[i] - my);
      sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    const double slope = sxy / sxx;
    const double expect = (static_cast<double>(d) - 1.0) / static_cast<double>(d);
    out.push_back({"error slope in d/s d=" + std::to_string(d),
                   std::abs(slope / expect - 1.0) <= 0.15, slope, expect, 0.15 * expect});
  }
  return out;
}

}  // namespace dbcl::theory
