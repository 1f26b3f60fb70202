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

#ifndef DBCL_MODEL_H_
#define DBCL_MODEL_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dbcl/layers.h"
#include "dbcl/linalg.h"
#include "dbcl/rng.h"

namespace dbcl::nn {

struct Relu {
  bool operator==(const Relu&) const = default;
};
struct MaxPool2 {
  bool operator==(const MaxPool2&) const = default;
};

using Stage = std::variant<DenseLayer, ConvLayer, Relu, MaxPool2>;

enum class LossKind : std::uint8_t { kSoftmaxCrossEntropy = 0, kSigmoidBce = 1 };

// Public network structure, shared by server and clients.
enum class StageKind : std::uint8_t { kDense = 0, kConv = 1, kRelu = 2, kMaxPool2 = 3 };
struct StageSpec {
  StageKind kind;
  std::size_t kernel = 0;  // conv only
};
struct Architecture {
  std::vector<StageSpec> stages;
  LossKind loss = LossKind::kSoftmaxCrossEntropy;
};

// Server-side model: the only place the true weights live.
struct Model {
  std::vector<Stage> stages;
  LossKind loss = LossKind::kSoftmaxCrossEntropy;

  Architecture architecture() const;
  std::size_t param_layer_count() const;
  // Dense or conv stage number `index` (0-based, in network order).
  const Matrix& weight(std::size_t index) const;
  Matrix& weight(std::size_t index);
  const std::vector<double>& bias(std::size_t index) const;
  std::vector<double>& bias(std::size_t index);
  bool sketch_enabled(std::size_t index) const;

  bool operator==(const Model&) const = default;
};

// Parameters of one dense/conv layer as a participant sees them. With a
// sketch, `weight` is W S (d_out x s); without one it is W itself.
struct ParamBlock {
  Matrix weight;
  std::vector<double> bias;
  SketchPtr sketch;
};

// One sketch per parameter layer (null = unsketched).
std::vector<ParamBlock> sketch_parameters(const Model& model, std::span<const SketchPtr> sketches);
// Unsketched blocks for inference or plain SGD.
std::vector<ParamBlock> plain_parameters(const Model& model);

struct PassResult {
  double loss = 0.0;
  Matrix logits;
  std::vector<LayerGrads> grads;  // one per parameter layer, in network order
};

// Forward, loss, and backward through the network. Sketched blocks run in
// train mode with their sketch; gamma for a sketched layer is d_out x s.
PassResult train_pass(const Architecture& arch, std::span<const ParamBlock> params,
                      const Tensor4& x, std::span<const int> labels);
// Forward and loss only.
double loss_only(const Architecture& arch, std::span<const ParamBlock> params,
                 const Tensor4& x, std::span<const int> labels);
Matrix forward_logits(const Architecture& arch, std::span<const ParamBlock> params,
                      const Tensor4& x);

// Inference-mode logits (no sketching).
Matrix predict(const Model& model, const Tensor4& x);
// Predicted class per row: argmax for softmax models, logit > 0 for sigmoid.
std::vector<int> predicted_labels(const Matrix& logits, LossKind loss);

// Dense(h1) -> ReLU -> ... -> Dense(outputs). outputs == 1 selects the
// sigmoid loss. The output layer is sketched only if sketch_last_layer.
Model make_mlp(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t outputs,
               bool sketch_last_layer, Rng& rng);
// Conv(c1,k) -> ReLU -> MaxPool -> Conv(c2,k) -> ReLU -> MaxPool -> Dense(hidden)
// -> ReLU -> Dense(outputs), valid convolutions.
Model make_cnn(const Shape4& input, std::size_t c1, std::size_t c2, std::size_t kernel,
               std::size_t hidden, std::size_t outputs, bool sketch_last_layer, Rng& rng);

// Flat little-endian container:
//   "DBCL" | u32 version | u32 record count | records...
// Records: u8 tag, then
//   dense (0): u32 d_out, u32 d_in, u32 sketch_enabled, W (row-major f64), bias (f64)
//   conv  (1): u32 c_out, u32 c_in, u32 kernel, u32 sketch_enabled, W, bias
//   relu  (2), maxpool2 (3): no payload
//   loss  (4): u32 loss kind; always the last record
std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace dbcl::nn

#endif  // DBCL_MODEL_H_
