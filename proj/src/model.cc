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

#include "dbcl/model.h"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <type_traits>

#include "dbcl/errors.h"

namespace dbcl::nn {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

struct ParamRef {
  Matrix* weight;
  std::vector<double>* bias;
  bool sketch_enabled;
};

ParamRef find_param(std::vector<Stage>& stages, std::size_t index) {
  std::size_t seen = 0;
  for (Stage& st : stages) {
    if (auto* d = std::get_if<DenseLayer>(&st)) {
      if (seen++ == index) return {&d->weight, &d->bias, d->sketch_enabled};
    } else if (auto* c = std::get_if<ConvLayer>(&st)) {
      if (seen++ == index) return {&c->weight, &c->bias, c->sketch_enabled};
    }
  }
  throw std::out_of_range("parameter layer " + std::to_string(index) + " does not exist");
}

// Per-stage state kept between forward and backward.
struct DenseRecord {
  ForwardCache cache;
  Shape4 input_shape;
};
struct ConvRecord {
  ForwardCache cache;
};
struct ReluRecord {
  Tensor4 pre;
};
struct PoolRecord {
  std::vector<std::size_t> argmax;
  Shape4 input_shape;
};
using Record = std::variant<DenseRecord, ConvRecord, ReluRecord, PoolRecord>;

struct ForwardState {
  Tensor4 output;
  std::vector<Record> records;
};

ForwardState run_forward(const Architecture& arch, std::span<const ParamBlock> params,
                         const Tensor4& x, bool keep_records) {
  ForwardState state;
  Tensor4 act = x;
  std::size_t p = 0;
  for (const StageSpec& spec : arch.stages) {
    switch (spec.kind) {
      case StageKind::kDense: {
        if (p >= params.size()) throw DimensionError("train_pass: too few parameter blocks");
        const ParamBlock& block = params[p++];
        const Shape4 in_shape = act.shape();
        DenseForward fwd =
            sketched_dense_forward(std::move(act).to_matrix(), block.weight, block.bias, block.sketch);
        act = Tensor4::from_matrix(std::move(fwd.z));
        if (keep_records) state.records.emplace_back(DenseRecord{std::move(fwd.cache), in_shape});
        break;
      }
      case StageKind::kConv: {
        if (p >= params.size()) throw DimensionError("train_pass: too few parameter blocks");
        const ParamBlock& block = params[p++];
        ConvForward fwd =
            sketched_conv_forward(act, block.weight, block.bias, spec.kernel, block.sketch);
        act = std::move(fwd.y);
        if (keep_records) state.records.emplace_back(ConvRecord{std::move(fwd.cache)});
        break;
      }
      case StageKind::kRelu: {
        Tensor4 out(act.shape());
        const auto in = act.data();
        auto o = out.data();
        for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
        if (keep_records) state.records.emplace_back(ReluRecord{std::move(act)});
        act = std::move(out);
        break;
      }
      case StageKind::kMaxPool2: {
        MaxPoolResult pooled = maxpool2(act);
        if (keep_records) {
          state.records.emplace_back(PoolRecord{std::move(pooled.argmax), act.shape()});
        }
        act = std::move(pooled.y);
        break;
      }
    }
  }
  if (p != params.size()) throw DimensionError("train_pass: too many parameter blocks");
  state.output = std::move(act);
  return state;
}

LossResult evaluate_loss(LossKind kind, const Matrix& logits, std::span<const int> labels) {
  return kind == LossKind::kSigmoidBce ? sigmoid_bce(logits, labels)
                                       : softmax_crossentropy(logits, labels);
}

// Little-endian byte writer/reader for the checkpoint container.
class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return std::bit_cast<double>(bits);
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError("checkpoint: truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint8_t kTagDense = 0;
constexpr std::uint8_t kTagConv = 1;
constexpr std::uint8_t kTagRelu = 2;
constexpr std::uint8_t kTagMaxPool = 3;
constexpr std::uint8_t kTagLoss = 4;

void write_params(Writer& w, const Matrix& weight, const std::vector<double>& bias) {
  for (double v : weight.data()) w.f64(v);
  for (double v : bias) w.f64(v);
}

void read_params(Reader& r, Matrix& weight, std::vector<double>& bias, std::size_t rows,
                 std::size_t cols) {
  std::vector<double> data(rows * cols);
  for (double& v : data) v = r.f64();
  weight = Matrix(rows, cols, std::move(data));
  bias.resize(rows);
  for (double& v : bias) v = r.f64();
}

}  // namespace

Architecture Model::architecture() const {
  Architecture arch;
  arch.loss = loss;
  for (const Stage& st : stages) {
    std::visit(Overloaded{
                   [&](const DenseLayer&) { arch.stages.push_back({StageKind::kDense}); },
                   [&](const ConvLayer& c) { arch.stages.push_back({StageKind::kConv, c.kernel}); },
                   [&](const Relu&) { arch.stages.push_back({StageKind::kRelu}); },
                   [&](const MaxPool2&) { arch.stages.push_back({StageKind::kMaxPool2}); },
               },
               st);
  }
  return arch;
}

std::size_t Model::param_layer_count() const {
  return static_cast<std::size_t>(std::count_if(stages.begin(), stages.end(), [](const Stage& st) {
    return std::holds_alternative<DenseLayer>(st) || std::holds_alternative<ConvLayer>(st);
  }));
}

Matrix& Model::weight(std::size_t index) { return *find_param(stages, index).weight; }
const Matrix& Model::weight(std::size_t index) const {
  return *find_param(const_cast<std::vector<Stage>&>(stages), index).weight;
}
std::vector<double>& Model::bias(std::size_t index) { return *find_param(stages, index).bias; }
const std::vector<double>& Model::bias(std::size_t index) const {
  return *find_param(const_cast<std::vector<Stage>&>(stages), index).bias;
}
bool Model::sketch_enabled(std::size_t index) const {
  return find_param(const_cast<std::vector<Stage>&>(stages), index).sketch_enabled;
}

std::vector<ParamBlock> sketch_parameters(const Model& model, std::span<const SketchPtr> sketches) {
  const std::size_t n = model.param_layer_count();
  if (sketches.size() != n) {
    throw DimensionError("sketch_parameters: " + std::to_string(sketches.size()) +
                         " sketches for " + std::to_string(n) + " parameter layers");
  }
  std::vector<ParamBlock> blocks;
  blocks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Matrix& w = model.weight(i);
    if (sketches[i] && sketches[i]->d() != w.cols()) {
      throw DimensionError("sketch_parameters: sketch " + std::to_string(i) +
                           " has d=" + std::to_string(sketches[i]->d()) + ", layer has d_in=" +
                           std::to_string(w.cols()));
    }
    blocks.push_back({sketch_weight(w, sketches[i].get()), model.bias(i), sketches[i]});
  }
  return blocks;
}

std::vector<ParamBlock> plain_parameters(const Model& model) {
  const std::vector<SketchPtr> none(model.param_layer_count());
  return sketch_parameters(model, none);
}

PassResult train_pass(const Architecture& arch, std::span<const ParamBlock> params,
                      const Tensor4& x, std::span<const int> labels) {
  ForwardState state = run_forward(arch, params, x, /*keep_records=*/true);
  PassResult result;
  result.logits = std::move(state.output).to_matrix();
  LossResult loss = evaluate_loss(arch.loss, result.logits, labels);
  result.loss = loss.loss;
  result.grads.resize(params.size());

  Tensor4 grad = Tensor4::from_matrix(std::move(loss.grad));
  std::size_t p = params.size();
  for (std::size_t i = state.records.size(); i-- > 0;) {
    // The first stage never needs an input gradient.
    const bool need_grad_x = i > 0;
    std::visit(Overloaded{
                   [&](const DenseRecord& rec) {
                     DenseBackward back =
                         dense_backward(std::move(grad).to_matrix(), rec.cache, need_grad_x);
                     result.grads[--p] = std::move(back.grads);
                     if (need_grad_x) grad = Tensor4(rec.input_shape, std::move(back.grad_x).release());
                   },
                   [&](const ConvRecord& rec) {
                     ConvBackward back = conv_backward(grad, rec.cache, need_grad_x);
                     result.grads[--p] = std::move(back.grads);
                     if (need_grad_x) grad = std::move(back.grad_x);
                   },
                   [&](const ReluRecord& rec) {
                     auto g = grad.data();
                     const auto pre = rec.pre.data();
                     for (std::size_t k = 0; k < g.size(); ++k)
                       if (!(pre[k] > 0.0)) g[k] = 0.0;
                   },
                   [&](const PoolRecord& rec) {
                     grad = maxpool2_backward(grad, rec.argmax, rec.input_shape);
                   },
               },
               state.records[i]);
  }
  return result;
}

double loss_only(const Architecture& arch, std::span<const ParamBlock> params, const Tensor4& x,
                 std::span<const int> labels) {
  ForwardState state = run_forward(arch, params, x, /*keep_records=*/false);
  return evaluate_loss(arch.loss, std::move(state.output).to_matrix(), labels).loss;
}

Matrix forward_logits(const Architecture& arch, std::span<const ParamBlock> params,
                      const Tensor4& x) {
  return std::move(run_forward(arch, params, x, false).output).to_matrix();
}

Matrix predict(const Model& model, const Tensor4& x) {
  return forward_logits(model.architecture(), plain_parameters(model), x);
}

std::vector<int> predicted_labels(const Matrix& logits, LossKind loss) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    if (loss == LossKind::kSigmoidBce) {
      out[i] = r[0] > 0.0 ? 1 : 0;
    } else {
      out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    }
  }
  return out;
}

Model make_mlp(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t outputs,
               bool sketch_last_layer, Rng& rng) {
  if (input_dim == 0 || outputs == 0) throw DimensionError("make_mlp: empty layer");
  Model model;
  model.loss = outputs == 1 ? LossKind::kSigmoidBce : LossKind::kSoftmaxCrossEntropy;
  std::size_t in = input_dim;
  for (std::size_t h : hidden) {
    model.stages.emplace_back(init_dense(in, h, true, rng));
    model.stages.emplace_back(Relu{});
    in = h;
  }
  model.stages.emplace_back(init_dense(in, outputs, sketch_last_layer, rng));
  return model;
}

Model make_cnn(const Shape4& input, std::size_t c1, std::size_t c2, std::size_t kernel,
               std::size_t hidden, std::size_t outputs, bool sketch_last_layer, Rng& rng) {
  Model model;
  model.loss = outputs == 1 ? LossKind::kSigmoidBce : LossKind::kSoftmaxCrossEntropy;
  std::size_t h = conv_output_extent(input.height, kernel);
  std::size_t w = conv_output_extent(input.width, kernel);
  if (h % 2 || w % 2) throw DimensionError("make_cnn: first pooling needs even extents");
  model.stages.emplace_back(init_conv(input.channels, c1, kernel, true, rng));
  model.stages.emplace_back(Relu{});
  model.stages.emplace_back(MaxPool2{});
  h = conv_output_extent(h / 2, kernel);
  w = conv_output_extent(w / 2, kernel);
  if (h % 2 || w % 2) throw DimensionError("make_cnn: second pooling needs even extents");
  model.stages.emplace_back(init_conv(c1, c2, kernel, true, rng));
  model.stages.emplace_back(Relu{});
  model.stages.emplace_back(MaxPool2{});
  const std::size_t flat = c2 * (h / 2) * (w / 2);
  model.stages.emplace_back(init_dense(flat, hidden, true, rng));
  model.stages.emplace_back(Relu{});
  model.stages.emplace_back(init_dense(hidden, outputs, sketch_last_layer, rng));
  return model;
}

std::vector<std::uint8_t> serialize_model(const Model& model) {
  Writer w;
  w.raw("DBCL");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(model.stages.size() + 1));
  for (const Stage& st : model.stages) {
    std::visit(Overloaded{
                   [&](const DenseLayer& d) {
                     w.u8(kTagDense);
                     w.u32(static_cast<std::uint32_t>(d.out_dim()));
                     w.u32(static_cast<std::uint32_t>(d.in_dim()));
                     w.u32(d.sketch_enabled ? 1 : 0);
                     write_params(w, d.weight, d.bias);
                   },
                   [&](const ConvLayer& c) {
                     w.u8(kTagConv);
                     w.u32(static_cast<std::uint32_t>(c.out_channels()));
                     w.u32(static_cast<std::uint32_t>(c.in_channels()));
                     w.u32(static_cast<std::uint32_t>(c.kernel));
                     w.u32(c.sketch_enabled ? 1 : 0);
                     write_params(w, c.weight, c.bias);
                   },
                   [&](const Relu&) { w.u8(kTagRelu); },
                   [&](const MaxPool2&) { w.u8(kTagMaxPool); },
               },
               st);
  }
  w.u8(kTagLoss);
  w.u32(static_cast<std::uint32_t>(model.loss));
  return w.take();
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "DBCL", 4) != 0) {
    throw DataError("checkpoint: bad magic");
  }
  Reader r(bytes.subspan(4));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  Model model;
  bool saw_loss = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    if (saw_loss) throw DataError("checkpoint: records after loss record");
    const std::uint8_t tag = r.u8();
    switch (tag) {
      case kTagDense: {
        DenseLayer d;
        const std::size_t out = r.u32();
        const std::size_t in = r.u32();
        d.sketch_enabled = r.u32() != 0;
        read_params(r, d.weight, d.bias, out, in);
        model.stages.emplace_back(std::move(d));
        break;
      }
      case kTagConv: {
        ConvLayer c;
        const std::size_t out = r.u32();
        const std::size_t in = r.u32();
        c.kernel = r.u32();
        c.sketch_enabled = r.u32() != 0;
        read_params(r, c.weight, c.bias, out, in * c.kernel * c.kernel);
        model.stages.emplace_back(std::move(c));
        break;
      }
      case kTagRelu:
        model.stages.emplace_back(Relu{});
        break;
      case kTagMaxPool:
        model.stages.emplace_back(MaxPool2{});
        break;
      case kTagLoss: {
        const std::uint32_t kind = r.u32();
        if (kind > 1) throw DataError("checkpoint: unknown loss kind");
        model.loss = static_cast<LossKind>(kind);
        saw_loss = true;
        break;
      }
      default:
        throw DataError("checkpoint: unknown record tag " + std::to_string(tag));
    }
  }
  if (!saw_loss) throw DataError("checkpoint: missing loss record");
  if (!r.at_end()) throw DataError("checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const Model& model, const std::string& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace dbcl::nn
