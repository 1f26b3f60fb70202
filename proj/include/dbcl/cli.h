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

#ifndef DBCL_CLI_H_
#define DBCL_CLI_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbcl/data.h"
#include "dbcl/fedsim.h"
#include "dbcl/model.h"

namespace dbcl::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kRuntimeError = 3 };

// Flat `key = value` run description. Keys not listed here are rejected.
struct RunConfig {
  std::string algorithm = "fedavg";
  std::size_t m = 10;
  double c = 1.0;
  std::size_t rounds = 10;
  std::size_t local_epochs = 1;
  std::size_t batch = 10;
  double lr = 0.05;
  std::string sketch_kind = "countsketch";  // or none
  std::vector<std::size_t> sketch_schedule = {2};  // "q" when it has one entry
  bool sketch_last_layer = false;
  std::string model = "mlp";  // mlp | cnn | linear
  std::vector<std::size_t> hidden = {200, 200};
  std::string dataset = "blobs";  // blobs | property | idx:<images>,<labels>
  std::size_t samples = 10000;
  std::size_t test_samples = 2000;
  std::size_t dim = 784;
  std::size_t classes = 10;
  double mu = 5.0;
  std::size_t eval_every = 1;
  std::uint64_t seed = 0;
  std::string out;  // empty writes to stdout

  // Keys given explicitly by a file or override.
  std::set<std::string> explicit_keys;

  // Throws ConfigError naming the offending key or line.
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::string& path);
  void set(std::string_view key, std::string_view value);
  // Every key in canonical order; parse(emit()) reproduces the config.
  std::string emit() const;
  bool is_set(std::string_view key) const { return explicit_keys.contains(std::string(key)); }
};

// Canonical key order.
std::span<const std::string_view> config_keys();

fed::TrainConfig to_train_config(const RunConfig& rc, bool timing);

struct Experiment {
  data::Dataset train;
  data::Dataset eval;
  nn::Model model;
};
// Dataset and initial model described by the config.
Experiment build_experiment(const RunConfig& rc);

// Entry point behind the dbcl binary; args excludes the program name.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace dbcl::cli

#endif  // DBCL_CLI_H_
