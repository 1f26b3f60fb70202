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

#ifndef DBCL_LAYERS_H_
#define DBCL_LAYERS_H_

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "dbcl/linalg.h"
#include "dbcl/rng.h"
#include "dbcl/sketch.h"

namespace dbcl::nn {

using sketch::SketchMatrix;
using sketch::SketchPtr;

struct DenseLayer {
  Matrix weight;              // d_out x d_in
  std::vector<double> bias;   // d_out
  bool sketch_enabled = true;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
  bool operator==(const DenseLayer&) const = default;
};

// Kernels are stored vectorized, one row per output channel, in the same
// (channel, kernel row, kernel column) order that unfold() uses.
struct ConvLayer {
  Matrix weight;              // c_out x (c_in * k * k)
  std::vector<double> bias;   // c_out
  std::size_t kernel = 1;
  bool sketch_enabled = true;

  std::size_t in_channels() const { return weight.cols() / (kernel * kernel); }
  std::size_t out_channels() const { return weight.rows(); }
  bool operator==(const ConvLayer&) const = default;
};

// Train mode carries the round's sketch; a null sketch trains unsketched.
// Inference never sketches.
class LayerMode {
 public:
  static LayerMode inference() { return LayerMode(false, nullptr); }
  static LayerMode train(SketchPtr sketch = nullptr) { return LayerMode(true, std::move(sketch)); }

  bool is_train() const { return train_; }
  const SketchPtr& sketch() const { return sketch_; }
  // Sketch in effect for this pass: null in inference mode.
  const SketchMatrix* active_sketch() const { return train_ ? sketch_.get() : nullptr; }

 private:
  LayerMode(bool train, SketchPtr sketch) : train_(train), sketch_(std::move(sketch)) {}
  bool train_;
  SketchPtr sketch_;
};

struct ConvGeometry {
  Shape4 input;
  std::size_t kernel = 0;
  std::size_t out_channels = 0;
  std::size_t out_height = 0;
  std::size_t out_width = 0;
};

// State a backward pass needs: the sketched input X S (or the patch matrix
// P S for convolutions), the sketched weight W S, and the sketch itself.
// Without a sketch both are stored unsketched.
struct ForwardCache {
  Matrix x_sketched;
  Matrix w_sketched;
  SketchPtr sketch;
  ConvGeometry conv;
};

struct LayerGrads {
  Matrix gamma;  // G^T (X S); the weight gradient is gamma * S^T
  std::vector<double> grad_bias;
};

struct DenseBackward {
  LayerGrads grads;
  Matrix grad_x;
};

struct ConvBackward {
  LayerGrads grads;
  Tensor4 grad_x;
};

// z = (X S)(W S)^T + bias in train mode, X W^T + bias otherwise.
struct DenseForward {
  Matrix z;
  ForwardCache cache;
};
DenseForward dense_forward(const Matrix& x, const DenseLayer& layer, const LayerMode& mode);

// Client-side variant: the caller holds only W S (d_out x s) and the sketch.
DenseForward sketched_dense_forward(const Matrix& x, const Matrix& w_sketched,
                                    std::span<const double> bias, SketchPtr sketch);

// gamma = G^T (X S), grad_x = (G W S) S^T, grad_bias = column sums of G.
DenseBackward dense_backward(const Matrix& g, const ForwardCache& cache,
                             bool need_grad_x = true);

struct ConvForward {
  Tensor4 y;  // (b, c_out, h_out, w_out)
  ForwardCache cache;
};
ConvForward conv_forward(const Tensor4& x, const ConvLayer& layer, const LayerMode& mode);
ConvForward sketched_conv_forward(const Tensor4& x, const Matrix& w_sketched,
                                  std::span<const double> bias, std::size_t kernel,
                                  SketchPtr sketch);
ConvBackward conv_backward(const Tensor4& g, const ForwardCache& cache,
                           bool need_grad_x = true);

// Full weight gradient gamma * S^T (identity when sketch is null).
Matrix expand_gradient(const Matrix& gamma, const SketchMatrix* sketch);
// W S (identity when sketch is null).
Matrix sketch_weight(const Matrix& w, const SketchMatrix* sketch);

Matrix relu(const Matrix& z);
// Subgradient at exactly 0 is 0.
Matrix relu_backward(const Matrix& g, const Matrix& z);

struct MaxPoolResult {
  Tensor4 y;
  std::vector<std::size_t> argmax;  // flat input index per output entry
};
// 2x2 window, stride 2. Ties go to the first element in row-major order.
MaxPoolResult maxpool2(const Tensor4& x);
Tensor4 maxpool2_backward(const Tensor4& g, std::span<const std::size_t> argmax,
                          const Shape4& input_shape);

struct LossResult {
  double loss = 0.0;
  Matrix grad;  // d loss / d logits
};
// Mean cross-entropy of softmax(logits); grad = (softmax - onehot) / b.
LossResult softmax_crossentropy(const Matrix& logits, std::span<const int> labels);
// Mean binary cross-entropy of sigmoid(logits) for a b x 1 logit column.
LossResult sigmoid_bce(const Matrix& logits, std::span<const int> labels);

// Uniform(+-sqrt(3/d_in)) weights, Uniform(+-1/sqrt(d_in)) biases.
DenseLayer init_dense(std::size_t d_in, std::size_t d_out, bool sketch_enabled, Rng& rng);
// Uniform(+-sqrt(6/(c_in k^2))) weights, Uniform(+-1/sqrt(c_in k^2)) biases.
ConvLayer init_conv(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                    bool sketch_enabled, Rng& rng);

}  // namespace dbcl::nn

#endif  // DBCL_LAYERS_H_
