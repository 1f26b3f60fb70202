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

#ifndef DBCL_FEDSIM_H_
#define DBCL_FEDSIM_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dbcl/data.h"
#include "dbcl/model.h"
#include "dbcl/rng.h"
#include "dbcl/sketch.h"

namespace dbcl::fed {

using sketch::SketchDescriptor;
using sketch::SketchKind;
using sketch::SketchPtr;

enum class Algorithm : std::uint8_t { kDsgd = 0, kFedAvg = 1 };
std::string_view to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view name);

struct TrainConfig {
  std::size_t clients = 10;     // m
  double participation = 1.0;   // c in (0, 1]
  Algorithm algorithm = Algorithm::kDsgd;
  std::size_t local_epochs = 1;
  std::size_t batch = 32;
  double lr = 0.01;
  // Unset trains without sketching.
  std::optional<SketchKind> sketch_kind = SketchKind::kCountSketch;
  // Compression q for round t is q_schedule[t % size]; s = floor(d_in / q).
  std::vector<std::size_t> q_schedule = {2};
  std::size_t rounds = 10;
  std::size_t eval_every = 1;
  std::uint64_t seed = 0;
  // Records wall-clock time per evaluation; off keeps output reproducible.
  bool timing = false;

  // Throws ConfigError on the first violated constraint.
  void validate() const;
  std::size_t q_for_round(std::size_t round) const;
  std::size_t clients_per_round() const;  // ceil(c * m)
};

struct LayerBroadcast {
  Matrix weight;  // W S for sketched layers, W otherwise
  std::vector<double> bias;
  std::optional<SketchDescriptor> sketch;  // nullopt marks an identity layer

  std::size_t weight_bytes() const { return weight.size() * sizeof(double); }
  std::size_t bias_bytes() const { return bias.size() * sizeof(double); }
};

struct RoundMsgDown {
  std::size_t round = 0;
  std::uint64_t psi = 0;
  nn::Architecture arch;
  std::vector<LayerBroadcast> layers;

  // round and psi (8 bytes each) plus every layer's weights and biases.
  std::size_t bytes() const;
};

struct LayerUpdate {
  // dsgd: gamma (d_out x s) and the bias gradient. FedAvg: the change of the
  // sketched weight and of the bias over the local epochs (initial - final).
  Matrix weight;
  std::vector<double> bias;
};

struct RoundMsgUp {
  std::size_t client_id = 0;
  std::size_t round = 0;
  std::vector<LayerUpdate> layers;
  double loss = 0.0;
  std::size_t samples = 0;

  // client id, round, loss, sample count (8 bytes each) plus layer payloads.
  std::size_t bytes() const;
};

struct ServerState {
  nn::Model model;
  std::size_t round = 0;
  Rng seed_rng{0};
  TrainConfig config;
  // Sketches of the outstanding broadcast, one per parameter layer.
  std::optional<std::vector<SketchPtr>> pending;
};

struct ClientState {
  std::size_t id = 0;
  data::Dataset shard;
  Rng rng{0};
};

ServerState make_server(nn::Model model, const TrainConfig& config);
// One client per shard, each with its own batch-selection stream.
std::vector<ClientState> make_clients(std::vector<data::Dataset> shards, std::uint64_t seed);

// Draws psi, builds this round's sketches from derive_seed(psi, round, layer),
// and returns the sketched weights. Throws ProtocolError if the previous
// broadcast has not been aggregated.
RoundMsgDown broadcast_round(ServerState& server);

// Sketches the client rebuilds from the message. Throws ProtocolError if a
// descriptor disagrees with the transmitted weight shape.
std::vector<SketchPtr> reconstruct_sketches(const RoundMsgDown& msg);

// One forward/backward pass on a random local batch.
RoundMsgUp client_round_dsgd(ClientState& client, const RoundMsgDown& msg, std::size_t batch);
// Same on an explicit batch.
RoundMsgUp client_round_dsgd(std::size_t client_id, const RoundMsgDown& msg, const Tensor4& x,
                             std::span<const int> labels);

// E local epochs of mini-batch SGD on the sketched weights with S frozen.
RoundMsgUp client_round_fedavg(ClientState& client, const RoundMsgDown& msg,
                               std::size_t local_epochs, std::size_t batch, double lr);

// dsgd: W <- W - lr * mean(gamma) S^T. FedAvg: W <- W - wmean(delta) S^T with
// weights proportional to sample counts. Biases follow the same rule.
void aggregate_and_update(ServerState& server, std::span<const RoundMsgUp> msgs);

// Full weight gradient (or update) per layer implied by a set of messages,
// before the learning rate is applied; exposed for protocol checks.
std::vector<Matrix> aggregate_weight_direction(const ServerState& server,
                                               std::span<const RoundMsgUp> msgs);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};
// Inference-mode loss and top-1 accuracy. Throws DataError on an empty set.
EvalResult evaluate(const nn::Model& model, const data::Dataset& ds);

struct MetricRecord {
  std::size_t round = 0;  // rounds completed
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double eval_accuracy = 0.0;
  std::size_t bytes_down = 0;  // cumulative
  std::size_t bytes_up = 0;    // cumulative
  double wall_ms = 0.0;
};

// Observer hooks for harnesses. on_broadcast sees each message together
// with the model it was built from.
struct RoundHooks {
  std::function<void(const RoundMsgDown&, const nn::Model&)> on_broadcast;
  std::function<void(std::span<const RoundMsgUp>)> on_uploads;
  std::function<void(const MetricRecord&)> on_metric;
};

struct TrainResult {
  nn::Model model;
  std::vector<MetricRecord> history;
};

// T rounds of broadcast, client sampling, local work, and aggregation, with
// an evaluation every eval_every rounds and after the last round.
TrainResult run_training(nn::Model model, const TrainConfig& config, const data::Dataset& train,
                         const data::Dataset& eval, const RoundHooks& hooks = {});

// JSON object per line: round, phase, loss, accuracy, bytes_down, bytes_up,
// wall_ms, plus train_loss.
void write_metric_jsonl(std::ostream& out, const MetricRecord& r);
void write_metric_csv_header(std::ostream& out);
void write_metric_csv(std::ostream& out, const MetricRecord& r);

}  // namespace dbcl::fed

#endif  // DBCL_FEDSIM_H_
