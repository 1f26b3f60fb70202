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

#ifndef DBCL_LINALG_H_
#define DBCL_LINALG_H_

#include <cstddef>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

namespace dbcl {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double> release() && { return std::move(data_); }

  bool operator==(const Matrix&) const = default;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double factor);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double factor, Matrix a);

// a * b.
Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T without forming the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// a^T * b without forming the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Sum over rows; result has a.cols() entries.
std::vector<double> column_sums(const Matrix& a);
// Adds bias[j] to every entry of column j.
void add_row_vector(Matrix& a, std::span<const double> bias);

double frobenius_dot(const Matrix& a, const Matrix& b);
double frobenius_norm_sq(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& a);

// Batched image tensor stored row-major as (batch, channels, height, width).
struct Shape4 {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t count() const { return batch * channels * height * width; }
  std::size_t per_sample() const { return channels * height * width; }
  bool operator==(const Shape4&) const = default;
};

class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, double fill = 0.0);
  Tensor4(Shape4 shape, std::vector<double> data);

  // Views a (batch x features) matrix as (batch, features, 1, 1).
  static Tensor4 from_matrix(Matrix m);

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_.channels + c) * shape_.height + y) * shape_.width + x];
  }
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_.channels + c) * shape_.height + y) * shape_.width + x];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  // Reinterprets the buffer as (batch x channels*height*width); no copy when
  // called on an rvalue.
  Matrix to_matrix() const&;
  Matrix to_matrix() &&;

  bool operator==(const Tensor4&) const = default;

 private:
  Shape4 shape_;
  std::vector<double> data_;
};

// Output spatial extent of a stride-1 convolution.
std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t pad = 0);

// im2col for stride-1 convolution. Rows are patches ordered by batch, then
// output row, then output column; within a patch, entries are ordered by
// channel, then kernel row, then kernel column. Positions that fall into the
// zero padding read as 0.
Matrix unfold(const Tensor4& x, std::size_t kernel, std::size_t pad = 0);

// Adjoint of unfold: scatters patch rows back, summing overlaps.
Tensor4 fold(const Matrix& patches, const Shape4& out_shape, std::size_t kernel,
             std::size_t pad = 0);

}  // namespace dbcl

#endif  // DBCL_LINALG_H_
