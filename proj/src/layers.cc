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

#include "dbcl/layers.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "dbcl/errors.h"

namespace dbcl::nn {
namespace {

std::vector<double> uniform_vector(std::size_t n, double bound, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  return Matrix(rows, cols, uniform_vector(rows * cols, bound, rng));
}

void check_bias(std::span<const double> bias, std::size_t out, const char* op) {
  if (bias.size() != out) {
    throw DimensionError(std::string(op) + ": bias has " + std::to_string(bias.size()) +
                         " entries for " + std::to_string(out) + " outputs");
  }
}

Matrix sketch_input(const Matrix& x, const SketchMatrix* sketch) {
  return sketch ? sketch::apply(x, *sketch) : x;
}

}  // namespace

Matrix sketch_weight(const Matrix& w, const SketchMatrix* sketch) {
  return sketch ? sketch::apply(w, *sketch) : w;
}

Matrix expand_gradient(const Matrix& gamma, const SketchMatrix* sketch) {
  return sketch ? sketch::apply_transpose(gamma, *sketch) : gamma;
}

DenseForward sketched_dense_forward(const Matrix& x, const Matrix& w_sketched,
                                    std::span<const double> bias, SketchPtr sketch) {
  const std::size_t expected_in = sketch ? sketch->d() : w_sketched.cols();
  if (x.cols() != expected_in) {
    throw DimensionError("dense_forward: input has " + std::to_string(x.cols()) +
                         " features, layer expects " + std::to_string(expected_in));
  }
  if (sketch && w_sketched.cols() != sketch->s()) {
    throw DimensionError("dense_forward: sketched weight has " +
                         std::to_string(w_sketched.cols()) + " columns, sketch size is " +
                         std::to_string(sketch->s()));
  }
  check_bias(bias, w_sketched.rows(), "dense_forward");
  DenseForward out;
  out.cache.x_sketched = sketch_input(x, sketch.get());
  out.cache.w_sketched = w_sketched;
  out.cache.sketch = std::move(sketch);
  out.z = matmul_nt(out.cache.x_sketched, out.cache.w_sketched);
  add_row_vector(out.z, bias);
  return out;
}

DenseForward dense_forward(const Matrix& x, const DenseLayer& layer, const LayerMode& mode) {
  const SketchMatrix* sketch = mode.active_sketch();
  if (sketch && sketch->d() != layer.in_dim()) {
    throw DimensionError("dense_forward: sketch dimension " + std::to_string(sketch->d()) +
                         " does not match d_in " + std::to_string(layer.in_dim()));
  }
  if (x.cols() != layer.in_dim()) {
    throw DimensionError("dense_forward: input has " + std::to_string(x.cols()) +
                         " features, layer expects " + std::to_string(layer.in_dim()));
  }
  SketchPtr handle = mode.is_train() ? mode.sketch() : nullptr;
  return sketched_dense_forward(x, sketch_weight(layer.weight, sketch), layer.bias,
                                std::move(handle));
}

DenseBackward dense_backward(const Matrix& g, const ForwardCache& cache, bool need_grad_x) {
  if (g.rows() != cache.x_sketched.rows() || g.cols() != cache.w_sketched.rows()) {
    throw DimensionError("dense_backward: gradient shape does not match cached forward");
  }
  DenseBackward out;
  out.grads.gamma = matmul_tn(g, cache.x_sketched);
  out.grads.grad_bias = column_sums(g);
  if (need_grad_x) out.grad_x = expand_gradient(matmul(g, cache.w_sketched), cache.sketch.get());
  return out;
}

ConvForward sketched_conv_forward(const Tensor4& x, const Matrix& w_sketched,
                                  std::span<const double> bias, std::size_t kernel,
                                  SketchPtr sketch) {
  const Shape4& in = x.shape();
  const std::size_t patch = in.channels * kernel * kernel;
  const std::size_t expected = sketch ? sketch->s() : patch;
  if (sketch && sketch->d() != patch) {
    throw DimensionError("conv_forward: sketch dimension " + std::to_string(sketch->d()) +
                         " does not match patch size " + std::to_string(patch));
  }
  if (w_sketched.cols() != expected) {
    throw DimensionError("conv_forward: weight has " + std::to_string(w_sketched.cols()) +
                         " columns, expected " + std::to_string(expected));
  }
  check_bias(bias, w_sketched.rows(), "conv_forward");

  ConvForward out;
  ConvGeometry& geo = out.cache.conv;
  geo.input = in;
  geo.kernel = kernel;
  geo.out_channels = w_sketched.rows();
  geo.out_height = conv_output_extent(in.height, kernel);
  geo.out_width = conv_output_extent(in.width, kernel);

  out.cache.x_sketched = sketch_input(unfold(x, kernel), sketch.get());
  out.cache.w_sketched = w_sketched;
  out.cache.sketch = std::move(sketch);

  Matrix z = matmul_nt(out.cache.x_sketched, out.cache.w_sketched);
  add_row_vector(z, bias);

  const std::size_t spatial = geo.out_height * geo.out_width;
  out.y = Tensor4({in.batch, geo.out_channels, geo.out_height, geo.out_width});
  auto y = out.y.data();
  for (std::size_t n = 0; n < in.batch; ++n)
    for (std::size_t p = 0; p < spatial; ++p) {
      const auto zr = z.row(n * spatial + p);
      for (std::size_t c = 0; c < geo.out_channels; ++c)
        y[(n * geo.out_channels + c) * spatial + p] = zr[c];
    }
  return out;
}

ConvForward conv_forward(const Tensor4& x, const ConvLayer& layer, const LayerMode& mode) {
  if (x.shape().channels != layer.in_channels()) {
    throw DimensionError("conv_forward: input has " + std::to_string(x.shape().channels) +
                         " channels, layer expects " + std::to_string(layer.in_channels()));
  }
  const SketchMatrix* sketch = mode.active_sketch();
  SketchPtr handle = mode.is_train() ? mode.sketch() : nullptr;
  return sketched_conv_forward(x, sketch_weight(layer.weight, sketch), layer.bias,
                               layer.kernel, std::move(handle));
}

ConvBackward conv_backward(const Tensor4& g, const ForwardCache& cache, bool need_grad_x) {
  const ConvGeometry& geo = cache.conv;
  const Shape4 expected{geo.input.batch, geo.out_channels, geo.out_height, geo.out_width};
  if (!(g.shape() == expected)) {
    throw DimensionError("conv_backward: gradient shape does not match cached forward");
  }
  const std::size_t spatial = geo.out_height * geo.out_width;
  Matrix g_flat(geo.input.batch * spatial, geo.out_channels);
  const auto gd = g.data();
  for (std::size_t n = 0; n < geo.input.batch; ++n)
    for (std::size_t c = 0; c < geo.out_channels; ++c)
      for (std::size_t p = 0; p < spatial; ++p)
        g_flat(n * spatial + p, c) = gd[(n * geo.out_channels + c) * spatial + p];

  ConvBackward out;
  out.grads.gamma = matmul_tn(g_flat, cache.x_sketched);
  out.grads.grad_bias = column_sums(g_flat);
  if (need_grad_x) {
    const Matrix grad_patches =
        expand_gradient(matmul(g_flat, cache.w_sketched), cache.sketch.get());
    out.grad_x = fold(grad_patches, geo.input, geo.kernel);
  }
  return out;
}

Matrix relu(const Matrix& z) {
  Matrix a = z;
  for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
  return a;
}

Matrix relu_backward(const Matrix& g, const Matrix& z) {
  if (g.rows() != z.rows() || g.cols() != z.cols()) {
    throw DimensionError("relu_backward: gradient and pre-activation shapes differ");
  }
  Matrix out = g;
  auto o = out.data();
  const auto zd = z.data();
  for (std::size_t i = 0; i < o.size(); ++i)
    if (!(zd[i] > 0.0)) o[i] = 0.0;
  return out;
}

MaxPoolResult maxpool2(const Tensor4& x) {
  const Shape4& s = x.shape();
  if (s.height % 2 != 0 || s.width % 2 != 0) {
    throw DimensionError("maxpool2: spatial dims must be even, got " +
                         std::to_string(s.height) + "x" + std::to_string(s.width));
  }
  const Shape4 out_shape{s.batch, s.channels, s.height / 2, s.width / 2};
  MaxPoolResult out{Tensor4(out_shape), std::vector<std::size_t>(out_shape.count())};
  const auto in = x.data();
  auto y = out.y.data();
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < s.batch * s.channels; ++nc) {
    const std::size_t plane = nc * s.height * s.width;
    for (std::size_t oy = 0; oy < out_shape.height; ++oy)
      for (std::size_t ox = 0; ox < out_shape.width; ++ox, ++o) {
        std::size_t best = plane + (2 * oy) * s.width + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = plane + (2 * oy + dy) * s.width + 2 * ox + dx;
            if (in[idx] > in[best]) best = idx;
          }
        y[o] = in[best];
        out.argmax[o] = best;
      }
  }
  return out;
}

Tensor4 maxpool2_backward(const Tensor4& g, std::span<const std::size_t> argmax,
                          const Shape4& input_shape) {
  if (g.size() != argmax.size()) {
    throw DimensionError("maxpool2_backward: gradient and argmax sizes differ");
  }
  Tensor4 out(input_shape);
  auto o = out.data();
  const auto gd = g.data();
  for (std::size_t i = 0; i < gd.size(); ++i) {
    if (argmax[i] >= o.size()) throw DimensionError("maxpool2_backward: argmax out of range");
    o[argmax[i]] += gd[i];
  }
  return out;
}

LossResult softmax_crossentropy(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) {
    throw DimensionError("softmax_crossentropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(logits.rows()) + " rows");
  }
  const std::size_t b = logits.rows();
  const std::size_t k = logits.cols();
  LossResult out{0.0, Matrix(b, k)};
  for (std::size_t i = 0; i < b; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw std::out_of_range("softmax_crossentropy: label " + std::to_string(label) +
                              " outside [0, " + std::to_string(k) + ")");
    }
    const auto z = logits.row(i);
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - zmax);
    const double log_denom = std::log(denom);
    out.loss += log_denom - (z[static_cast<std::size_t>(label)] - zmax);
    auto gr = out.grad.row(i);
    for (std::size_t j = 0; j < k; ++j) gr[j] = std::exp(z[j] - zmax - log_denom);
    gr[static_cast<std::size_t>(label)] -= 1.0;
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  out.loss *= inv_b;
  out.grad *= inv_b;
  return out;
}

LossResult sigmoid_bce(const Matrix& logits, std::span<const int> labels) {
  if (logits.cols() != 1) throw DimensionError("sigmoid_bce: expects a single logit column");
  if (labels.size() != logits.rows()) {
    throw DimensionError("sigmoid_bce: label count does not match batch size");
  }
  const std::size_t b = logits.rows();
  LossResult out{0.0, Matrix(b, 1)};
  for (std::size_t i = 0; i < b; ++i) {
    const int y = labels[i];
    if (y != 0 && y != 1) {
      throw std::out_of_range("sigmoid_bce: label " + std::to_string(y) + " not in {0,1}");
    }
    const double z = logits(i, 0);
    // log(1 + e^z) - y z, written to avoid overflow for large |z|.
    const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
    out.loss += softplus - y * z;
    const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    out.grad(i, 0) = p - y;
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  out.loss *= inv_b;
  out.grad *= inv_b;
  return out;
}

DenseLayer init_dense(std::size_t d_in, std::size_t d_out, bool sketch_enabled, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  DenseLayer layer;
  layer.weight = uniform_matrix(d_out, d_in, bound * std::sqrt(3.0), rng);
  layer.bias = uniform_vector(d_out, bound, rng);
  layer.sketch_enabled = sketch_enabled;
  return layer;
}

ConvLayer init_conv(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                    bool sketch_enabled, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in * kernel * kernel));
  ConvLayer layer;
  layer.weight = uniform_matrix(c_out, c_in * kernel * kernel, bound * std::sqrt(6.0), rng);
  layer.bias = uniform_vector(c_out, bound, rng);
  layer.kernel = kernel;
  layer.sketch_enabled = sketch_enabled;
  return layer;
}

}  // namespace dbcl::nn
