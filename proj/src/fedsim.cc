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

#include "dbcl/fedsim.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include <json.hpp>

#include "dbcl/errors.h"
#include "dbcl/parallel.h"

namespace dbcl::fed {
namespace {

// Stream tags mixed into derive_seed so that independent consumers of the
// run seed never share a random stream.
constexpr std::uint64_t kPsiStream = 0x5EED;
constexpr std::uint64_t kClientStream = 0xC11E;
constexpr std::uint64_t kSampleStream = 0x5A3B;
constexpr std::uint64_t kPartitionStream = 0x9A27;

std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(n - i)]);
  pool.resize(k);
  return pool;
}

std::vector<nn::ParamBlock> blocks_from_message(const RoundMsgDown& msg,
                                                const std::vector<SketchPtr>& sketches) {
  std::vector<nn::ParamBlock> blocks;
  blocks.reserve(msg.layers.size());
  for (std::size_t l = 0; l < msg.layers.size(); ++l) {
    blocks.push_back({msg.layers[l].weight, msg.layers[l].bias, sketches[l]});
  }
  return blocks;
}

void axpy(std::vector<double>& y, double a, std::span<const double> x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

std::vector<double> subtract(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

void check_messages(const ServerState& server, std::span<const RoundMsgUp> msgs) {
  if (!server.pending) {
    throw ProtocolError("aggregate: no outstanding broadcast for round " +
                        std::to_string(server.round));
  }
  if (msgs.empty()) throw ProtocolError("aggregate: no client messages");
  const auto& sketches = *server.pending;
  std::set<std::size_t> seen;
  for (const RoundMsgUp& m : msgs) {
    if (m.round != server.round) {
      throw ProtocolError("aggregate: stale message from client " + std::to_string(m.client_id) +
                          " for round " + std::to_string(m.round) + ", server is at round " +
                          std::to_string(server.round));
    }
    if (!seen.insert(m.client_id).second) {
      throw ProtocolError("aggregate: duplicate message from client " +
                          std::to_string(m.client_id));
    }
    if (m.layers.size() != sketches.size()) {
      throw ProtocolError("aggregate: message carries " + std::to_string(m.layers.size()) +
                          " layers, model has " + std::to_string(sketches.size()));
    }
    for (std::size_t l = 0; l < sketches.size(); ++l) {
      const Matrix& w = server.model.weight(l);
      const std::size_t cols = sketches[l] ? sketches[l]->s() : w.cols();
      if (m.layers[l].weight.rows() != w.rows() || m.layers[l].weight.cols() != cols ||
          m.layers[l].bias.size() != w.rows()) {
        throw ProtocolError("aggregate: layer " + std::to_string(l) + " from client " +
                            std::to_string(m.client_id) + " does not match the round's sketch");
      }
    }
  }
}

// Per-message weights: uniform for dsgd, proportional to samples for FedAvg.
std::vector<double> message_weights(Algorithm algorithm, std::span<const RoundMsgUp> msgs) {
  std::vector<double> w(msgs.size(), 1.0 / static_cast<double>(msgs.size()));
  if (algorithm == Algorithm::kFedAvg) {
    double total = 0.0;
    for (const auto& m : msgs) total += static_cast<double>(m.samples);
    if (total <= 0.0) throw ProtocolError("aggregate: FedAvg messages report no samples");
    for (std::size_t i = 0; i < msgs.size(); ++i) w[i] = static_cast<double>(msgs[i].samples) / total;
  }
  return w;
}

struct Combined {
  std::vector<Matrix> weight;  // in sketched coordinates
  std::vector<std::vector<double>> bias;
};

Combined combine(const ServerState& server, std::span<const RoundMsgUp> msgs) {
  check_messages(server, msgs);
  const auto weights = message_weights(server.config.algorithm, msgs);
  Combined c;
  const std::size_t layers = msgs.front().layers.size();
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix acc(msgs.front().layers[l].weight.rows(), msgs.front().layers[l].weight.cols());
    std::vector<double> bias(msgs.front().layers[l].bias.size(), 0.0);
    for (std::size_t i = 0; i < msgs.size(); ++i) {
      auto dst = acc.data();
      const auto src = msgs[i].layers[l].weight.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += weights[i] * src[k];
      axpy(bias, weights[i], msgs[i].layers[l].bias);
    }
    c.weight.push_back(std::move(acc));
    c.bias.push_back(std::move(bias));
  }
  return c;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string_view to_string(Algorithm a) { return a == Algorithm::kDsgd ? "dsgd" : "fedavg"; }

Algorithm parse_algorithm(std::string_view name) {
  if (name == "dsgd") return Algorithm::kDsgd;
  if (name == "fedavg") return Algorithm::kFedAvg;
  throw ConfigError("unknown algorithm '" + std::string(name) + "' (expected dsgd or fedavg)");
}

void TrainConfig::validate() const {
  if (clients == 0) throw ConfigError("m must be at least 1");
  if (!(participation > 0.0 && participation <= 1.0)) {
    throw ConfigError("c must lie in (0, 1], got " + format_double(participation));
  }
  if (local_epochs == 0) throw ConfigError("local_epochs must be at least 1");
  if (batch == 0) throw ConfigError("batch must be at least 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive and finite");
  if (rounds == 0) throw ConfigError("rounds must be at least 1");
  if (eval_every == 0) throw ConfigError("eval_every must be at least 1");
  if (sketch_kind) {
    if (q_schedule.empty()) throw ConfigError("sketch schedule is empty");
    for (std::size_t q : q_schedule) {
      if (q < 2) throw ConfigError("q must be at least 2 for sketched layers, got " + std::to_string(q));
    }
  }
}

std::size_t TrainConfig::q_for_round(std::size_t round) const {
  return q_schedule[round % q_schedule.size()];
}

std::size_t TrainConfig::clients_per_round() const {
  const double k = std::ceil(participation * static_cast<double>(clients) - 1e-12);
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, clients);
}

std::size_t RoundMsgDown::bytes() const {
  std::size_t total = 2 * sizeof(std::uint64_t);
  for (const auto& l : layers) total += l.weight_bytes() + l.bias_bytes();
  return total;
}

std::size_t RoundMsgUp::bytes() const {
  std::size_t total = 4 * sizeof(std::uint64_t);
  for (const auto& l : layers) total += (l.weight.size() + l.bias.size()) * sizeof(double);
  return total;
}

ServerState make_server(nn::Model model, const TrainConfig& config) {
  config.validate();
  ServerState s;
  s.model = std::move(model);
  s.config = config;
  s.seed_rng = Rng(derive_seed(config.seed, 0, kPsiStream));
  return s;
}

std::vector<ClientState> make_clients(std::vector<data::Dataset> shards, std::uint64_t seed) {
  std::vector<ClientState> clients;
  clients.reserve(shards.size());
  for (std::size_t i = 0; i < shards.size(); ++i) {
    clients.push_back({i, std::move(shards[i]), Rng(derive_seed(seed, i, kClientStream))});
  }
  return clients;
}

RoundMsgDown broadcast_round(ServerState& server) {
  if (server.pending) {
    throw ProtocolError("broadcast: round " + std::to_string(server.round) +
                        " has not been aggregated yet");
  }
  RoundMsgDown msg;
  msg.round = server.round;
  msg.psi = server.seed_rng.next();
  msg.arch = server.model.architecture();
  const std::size_t n = server.model.param_layer_count();
  std::vector<SketchPtr> sketches(n);
  const std::size_t q = server.config.sketch_kind ? server.config.q_for_round(server.round) : 0;
  for (std::size_t l = 0; l < n; ++l) {
    const Matrix& w = server.model.weight(l);
    LayerBroadcast layer;
    layer.bias = server.model.bias(l);
    if (server.config.sketch_kind && server.model.sketch_enabled(l)) {
      const auto desc = SketchDescriptor::with_compression(*server.config.sketch_kind, w.cols(), q);
      sketches[l] = sketch::make_sketch({desc, derive_seed(msg.psi, msg.round, l)});
      layer.weight = sketch::apply(w, *sketches[l]);
      layer.sketch = desc;
    } else {
      layer.weight = w;
    }
    msg.layers.push_back(std::move(layer));
  }
  server.pending = std::move(sketches);
  return msg;
}

std::vector<SketchPtr> reconstruct_sketches(const RoundMsgDown& msg) {
  std::vector<SketchPtr> out;
  out.reserve(msg.layers.size());
  for (std::size_t l = 0; l < msg.layers.size(); ++l) {
    const LayerBroadcast& layer = msg.layers[l];
    if (!layer.sketch) {
      out.push_back(nullptr);
      continue;
    }
    const SketchDescriptor& desc = *layer.sketch;
    const bool permuted_ok =
        desc.kind != SketchKind::kPermutedCountSketch || (desc.q >= 2 && desc.s == desc.d / desc.q);
    if (!permuted_ok || desc.s != layer.weight.cols() || desc.s == 0 || desc.s >= desc.d) {
      throw ProtocolError("layer " + std::to_string(l) + ": descriptor (d=" +
                          std::to_string(desc.d) + ", s=" + std::to_string(desc.s) +
                          ") does not match the transmitted weight with " +
                          std::to_string(layer.weight.cols()) + " columns");
    }
    out.push_back(sketch::make_sketch({desc, derive_seed(msg.psi, msg.round, l)}));
  }
  return out;
}

RoundMsgUp client_round_dsgd(std::size_t client_id, const RoundMsgDown& msg, const Tensor4& x,
                             std::span<const int> labels) {
  const auto sketches = reconstruct_sketches(msg);
  const auto blocks = blocks_from_message(msg, sketches);
  nn::PassResult pass = nn::train_pass(msg.arch, blocks, x, labels);
  RoundMsgUp up;
  up.client_id = client_id;
  up.round = msg.round;
  up.loss = pass.loss;
  up.samples = labels.size();
  for (auto& g : pass.grads) up.layers.push_back({std::move(g.gamma), std::move(g.grad_bias)});
  return up;
}

RoundMsgUp client_round_dsgd(ClientState& client, const RoundMsgDown& msg, std::size_t batch) {
  const std::size_t n = client.shard.size();
  if (n == 0) throw DataError("client " + std::to_string(client.id) + " has no data");
  const auto idx = draw_without_replacement(n, std::min(batch, n), client.rng);
  std::vector<int> labels;
  labels.reserve(idx.size());
  for (std::size_t i : idx) labels.push_back(client.shard.labels[i]);
  return client_round_dsgd(client.id, msg, data::gather_features(client.shard.features, idx),
                           labels);
}

RoundMsgUp client_round_fedavg(ClientState& client, const RoundMsgDown& msg,
                               std::size_t local_epochs, std::size_t batch, double lr) {
  const std::size_t n = client.shard.size();
  if (n == 0) throw DataError("client " + std::to_string(client.id) + " has no data");
  if (batch == 0) throw ConfigError("batch must be at least 1");
  const auto sketches = reconstruct_sketches(msg);
  auto blocks = blocks_from_message(msg, sketches);
  double loss_sum = 0.0;
  std::size_t steps = 0;
  std::vector<int> labels;
  for (std::size_t epoch = 0; epoch < local_epochs; ++epoch) {
    const auto order = draw_without_replacement(n, n, client.rng);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::span<const std::size_t> idx =
          std::span(order).subspan(start, std::min(batch, n - start));
      labels.clear();
      for (std::size_t i : idx) labels.push_back(client.shard.labels[i]);
      const nn::PassResult pass =
          nn::train_pass(msg.arch, blocks, data::gather_features(client.shard.features, idx), labels);
      for (std::size_t l = 0; l < blocks.size(); ++l) {
        auto w = blocks[l].weight.data();
        const auto g = pass.grads[l].gamma.data();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * g[k];
        axpy(blocks[l].bias, -lr, pass.grads[l].grad_bias);
      }
      loss_sum += pass.loss;
      ++steps;
    }
  }
  RoundMsgUp up;
  up.client_id = client.id;
  up.round = msg.round;
  up.loss = loss_sum / static_cast<double>(steps);
  up.samples = n;
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    up.layers.push_back(
        {msg.layers[l].weight - blocks[l].weight, subtract(msg.layers[l].bias, blocks[l].bias)});
  }
  return up;
}

std::vector<Matrix> aggregate_weight_direction(const ServerState& server,
                                               std::span<const RoundMsgUp> msgs) {
  Combined c = combine(server, msgs);
  std::vector<Matrix> out;
  for (std::size_t l = 0; l < c.weight.size(); ++l) {
    out.push_back(nn::expand_gradient(c.weight[l], (*server.pending)[l].get()));
  }
  return out;
}

void aggregate_and_update(ServerState& server, std::span<const RoundMsgUp> msgs) {
  Combined c = combine(server, msgs);
  // dsgd messages carry gradients; FedAvg messages carry finished steps.
  const double scale = server.config.algorithm == Algorithm::kDsgd ? server.config.lr : 1.0;
  for (std::size_t l = 0; l < c.weight.size(); ++l) {
    Matrix step = nn::expand_gradient(c.weight[l], (*server.pending)[l].get());
    auto w = server.model.weight(l).data();
    const auto d = step.data();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= scale * d[k];
    axpy(server.model.bias(l), -scale, c.bias[l]);
  }
  server.pending.reset();
  ++server.round;
}

EvalResult evaluate(const nn::Model& model, const data::Dataset& ds) {
  const std::size_t n = ds.size();
  if (n == 0) throw DataError("evaluate: empty evaluation set");
  constexpr std::size_t kChunk = 512;
  double loss = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t len = std::min(kChunk, n - start);
    idx.resize(len);
    std::iota(idx.begin(), idx.end(), start);
    const Matrix logits = nn::predict(model, data::gather_features(ds.features, idx));
    const std::span<const int> labels = std::span(ds.labels).subspan(start, len);
    const nn::LossResult l = model.loss == nn::LossKind::kSigmoidBce
                                 ? nn::sigmoid_bce(logits, labels)
                                 : nn::softmax_crossentropy(logits, labels);
    loss += l.loss * static_cast<double>(len);
    const auto pred = nn::predicted_labels(logits, model.loss);
    for (std::size_t i = 0; i < len; ++i) correct += pred[i] == labels[i];
  }
  return {loss / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
}

TrainResult run_training(nn::Model model, const TrainConfig& config, const data::Dataset& train,
                         const data::Dataset& eval, const RoundHooks& hooks) {
  config.validate();
  auto clients = make_clients(
      data::partition(train, config.clients, derive_seed(config.seed, 0, kPartitionStream)),
      config.seed);
  ServerState server = make_server(std::move(model), config);
  const std::size_t k = config.clients_per_round();
  const auto start = std::chrono::steady_clock::now();

  TrainResult result;
  std::size_t bytes_down = 0, bytes_up = 0;
  double loss_since_eval = 0.0;
  std::size_t rounds_since_eval = 0;
  for (std::size_t t = 0; t < config.rounds; ++t) {
    const RoundMsgDown msg = broadcast_round(server);
    if (hooks.on_broadcast) hooks.on_broadcast(msg, server.model);
    Rng sampler(derive_seed(config.seed, t, kSampleStream));
    auto chosen = draw_without_replacement(config.clients, k, sampler);
    std::sort(chosen.begin(), chosen.end());

    std::vector<RoundMsgUp> ups(k);
    parallel_for(k, [&](std::size_t i) {
      ClientState& c = clients[chosen[i]];
      ups[i] = config.algorithm == Algorithm::kDsgd
                   ? client_round_dsgd(c, msg, config.batch)
                   : client_round_fedavg(c, msg, config.local_epochs, config.batch, config.lr);
    });
    if (hooks.on_uploads) hooks.on_uploads(ups);
    bytes_down += msg.bytes() * k;
    double round_loss = 0.0;
    for (const auto& u : ups) {
      bytes_up += u.bytes();
      round_loss += u.loss;
    }
    loss_since_eval += round_loss / static_cast<double>(k);
    ++rounds_since_eval;
    aggregate_and_update(server, ups);

    if ((t + 1) % config.eval_every == 0 || t + 1 == config.rounds) {
      const EvalResult ev = evaluate(server.model, eval);
      MetricRecord rec;
      rec.round = t + 1;
      rec.train_loss = loss_since_eval / static_cast<double>(rounds_since_eval);
      rec.eval_loss = ev.loss;
      rec.eval_accuracy = ev.accuracy;
      rec.bytes_down = bytes_down;
      rec.bytes_up = bytes_up;
      if (config.timing) {
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                start)
                          .count();
      }
      loss_since_eval = 0.0;
      rounds_since_eval = 0;
      if (hooks.on_metric) hooks.on_metric(rec);
      result.history.push_back(rec);
    }
  }
  result.model = std::move(server.model);
  return result;
}

void write_metric_jsonl(std::ostream& out, const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  j["phase"] = "eval";
  j["loss"] = r.eval_loss;
  j["accuracy"] = r.eval_accuracy;
  j["bytes_down"] = r.bytes_down;
  j["bytes_up"] = r.bytes_up;
  j["wall_ms"] = r.wall_ms;
  j["train_loss"] = r.train_loss;
  out << j.dump() << '\n';
}

void write_metric_csv_header(std::ostream& out) {
  out << "round,train_loss,eval_loss,eval_accuracy,bytes_down,bytes_up,wall_ms\n";
}

void write_metric_csv(std::ostream& out, const MetricRecord& r) {
  out << r.round << ',' << format_double(r.train_loss) << ',' << format_double(r.eval_loss) << ','
      << format_double(r.eval_accuracy) << ',' << r.bytes_down << ',' << r.bytes_up << ','
      << format_double(r.wall_ms) << '\n';
}

}  // namespace dbcl::fed
