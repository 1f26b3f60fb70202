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

#include "dbcl/linalg.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "dbcl/errors.h"

namespace dbcl {
namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("Matrix: buffer length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix& Matrix::operator+=(const Matrix& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double factor) {
  for (double& v : data_) v *= factor;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(double factor, Matrix a) { return a *= factor; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_str(a) + " * " + shape_str(b));
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    const double* ar = a.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = ar[k];
      if (aik == 0.0) continue;
      const double* br = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + shape_str(a) + " * (" + shape_str(b) + ")^T");
  }
  // The row-axpy kernel in matmul vectorizes and sums over k in the same
  // order as the dot-product loop below, so both paths agree bit for bit.
  if (a.rows() >= 4) return matmul(a, transpose(b));
  Matrix out(a.rows(), b.rows());
  const std::size_t inner = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* br = b.row(j).data();
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += ar[k] * br[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: (" + shape_str(a) + ")^T * " + shape_str(b));
  }
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ar = a.row(k).data();
    const double* br = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ar[i];
      if (aki == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

std::vector<double> column_sums(const Matrix& a) {
  std::vector<double> sums(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) sums[j] += r[j];
  }
  return sums;
}

void add_row_vector(Matrix& a, std::span<const double> bias) {
  if (bias.size() != a.cols()) {
    throw DimensionError("add_row_vector: bias length " + std::to_string(bias.size()) +
                         " vs " + std::to_string(a.cols()) + " columns");
  }
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) r[j] += bias[j];
  }
}

double frobenius_dot(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "frobenius_dot");
  double acc = 0.0;
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

double frobenius_norm_sq(const Matrix& a) { return frobenius_dot(a, a); }

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
  return worst;
}

bool all_finite(const Matrix& a) {
  return std::all_of(a.data().begin(), a.data().end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor4::Tensor4(Shape4 shape, double fill) : shape_(shape), data_(shape.count(), fill) {}

Tensor4::Tensor4(Shape4 shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.count()) {
    throw DimensionError("Tensor4: buffer length " + std::to_string(data_.size()) +
                         " does not match shape");
  }
}

Tensor4 Tensor4::from_matrix(Matrix m) {
  const Shape4 shape{m.rows(), m.cols(), 1, 1};
  return Tensor4(shape, std::move(m).release());
}

Matrix Tensor4::to_matrix() const& {
  return Matrix(shape_.batch, shape_.per_sample(), data_);
}

Matrix Tensor4::to_matrix() && {
  const std::size_t rows = shape_.batch;
  const std::size_t cols = shape_.per_sample();
  return Matrix(rows, cols, std::move(data_));
}

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t pad) {
  if (kernel == 0 || kernel > input + 2 * pad) {
    throw DimensionError("convolution: kernel " + std::to_string(kernel) +
                         " does not fit spatial extent " + std::to_string(input) +
                         " (pad " + std::to_string(pad) + ")");
  }
  return input + 2 * pad - kernel + 1;
}

Matrix unfold(const Tensor4& x, std::size_t kernel, std::size_t pad) {
  const Shape4& s = x.shape();
  const std::size_t oh = conv_output_extent(s.height, kernel, pad);
  const std::size_t ow = conv_output_extent(s.width, kernel, pad);
  const std::size_t patch = s.channels * kernel * kernel;
  Matrix out(s.batch * oh * ow, patch);
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double* r = out.row((n * oh + oy) * ow + ox).data();
        std::size_t col = 0;
        for (std::size_t c = 0; c < s.channels; ++c) {
          for (std::size_t ky = 0; ky < kernel; ++ky) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy + ky) -
                                     static_cast<std::ptrdiff_t>(pad);
            for (std::size_t kx = 0; kx < kernel; ++kx, ++col) {
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox + kx) -
                                        static_cast<std::ptrdiff_t>(pad);
              const bool inside = y >= 0 && xx >= 0 &&
                                  y < static_cast<std::ptrdiff_t>(s.height) &&
                                  xx < static_cast<std::ptrdiff_t>(s.width);
              r[col] = inside ? x.at(n, c, static_cast<std::size_t>(y),
                                     static_cast<std::size_t>(xx))
                              : 0.0;
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor4 fold(const Matrix& patches, const Shape4& out_shape, std::size_t kernel,
             std::size_t pad) {
  const std::size_t oh = conv_output_extent(out_shape.height, kernel, pad);
  const std::size_t ow = conv_output_extent(out_shape.width, kernel, pad);
  const std::size_t patch = out_shape.channels * kernel * kernel;
  if (patches.rows() != out_shape.batch * oh * ow || patches.cols() != patch) {
    throw DimensionError("fold: patch matrix " + shape_str(patches) +
                         " does not match target shape");
  }
  Tensor4 out(out_shape);
  for (std::size_t n = 0; n < out_shape.batch; ++n) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double* r = patches.row((n * oh + oy) * ow + ox).data();
        std::size_t col = 0;
        for (std::size_t c = 0; c < out_shape.channels; ++c) {
          for (std::size_t ky = 0; ky < kernel; ++ky) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy + ky) -
                                     static_cast<std::ptrdiff_t>(pad);
            for (std::size_t kx = 0; kx < kernel; ++kx, ++col) {
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox + kx) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (y < 0 || xx < 0 || y >= static_cast<std::ptrdiff_t>(out_shape.height) ||
                  xx >= static_cast<std::ptrdiff_t>(out_shape.width)) {
                continue;
              }
              out.at(n, c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)) +=
                  r[col];
            }
          }
        }
      }
    }
  }
  return out;
}

}  // namespace dbcl
