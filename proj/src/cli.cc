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

#include "dbcl/cli.h"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dbcl/attack.h"
#include "dbcl/errors.h"
#include "dbcl/sketch.h"
#include "dbcl/theory.h"

namespace dbcl::cli {
namespace {

constexpr std::uint64_t kDataStream = 0xDA7A;
constexpr std::uint64_t kInitStream = 0x1A17;

constexpr std::string_view kKeys[] = {
    "algorithm", "m",      "c",          "rounds",  "local_epochs", "batch",
    "lr",        "sketch_kind", "q",     "sketch_schedule", "sketch_last_layer", "model",
    "hidden",    "dataset", "samples",   "test_samples", "dim",      "classes",
    "mu",        "eval_every", "seed",   "out"};

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view why) {
  throw ConfigError("invalid value for '" + std::string(key) + "': '" + std::string(value) +
                    "' (" + std::string(why) + ")");
}

template <typename T>
T parse_unsigned(std::string_view key, std::string_view v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    bad_value(key, v, "expected a non-negative integer");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    bad_value(key, v, "expected a finite number");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "expected true or false");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.push_back(parse_unsigned<std::size_t>(key, trim(v.substr(start, comma - start))));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string format_real(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string format_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

// Flat (n, dim, 1, 1) features as (n, 1, r, r) when dim is a square.
Tensor4 as_square_images(const Tensor4& t) {
  const Shape4& s = t.shape();
  if (s.height != 1 || s.width != 1) return t;
  const auto r = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(s.channels))));
  if (r * r != s.channels) {
    throw ConfigError("model 'cnn' needs image data or a square feature count, got " +
                      std::to_string(s.channels));
  }
  const auto d = t.data();
  return Tensor4({s.batch, 1, r, r}, std::vector<double>(d.begin(), d.end()));
}

// ---------------------------------------------------------------------------

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  bool csv = false;
  bool timing = false;
};

RunConfig resolve(const Options& o) {
  RunConfig rc = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    rc.set(trim(std::string_view(kv).substr(0, eq)), trim(std::string_view(kv).substr(eq + 1)));
  }
  if (o.seed) {
    rc.seed = *o.seed;
    rc.explicit_keys.insert("seed");
  }
  return rc;
}

class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) {
    if (path.empty()) {
      out_ = &fallback;
    } else {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
      if (!*file_) throw std::runtime_error("cannot open output file '" + path + "'");
      out_ = file_.get();
    }
  }
  std::ostream& get() { return *out_; }
  void finish() {
    out_->flush();
    if (!*out_) throw std::runtime_error("failed writing output");
  }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* out_ = nullptr;
};

int cmd_train(const RunConfig& rc, const Options& o, std::ostream& out) {
  const fed::TrainConfig tc = to_train_config(rc, o.timing);
  Experiment ex = build_experiment(rc);
  Sink sink(rc.out, out);
  if (o.csv) fed::write_metric_csv_header(sink.get());
  fed::RoundHooks hooks;
  hooks.on_metric = [&](const fed::MetricRecord& r) {
    if (o.csv) {
      fed::write_metric_csv(sink.get(), r);
    } else {
      fed::write_metric_jsonl(sink.get(), r);
    }
  };
  fed::run_training(std::move(ex.model), tc, ex.train, ex.eval, hooks);
  sink.finish();
  return kOk;
}

int cmd_attack_estimate(const RunConfig& rc, const Options& o, std::ostream& out) {
  const fed::TrainConfig tc = to_train_config(rc, o.timing);
  if (!tc.sketch_kind) throw ConfigError("attack-estimate needs a sketched run (sketch_kind)");
  Experiment ex = build_experiment(rc);
  attack::EstimateTracker tracker;
  fed::RoundHooks hooks;
  hooks.on_broadcast = [&](const fed::RoundMsgDown& msg, const nn::Model& model) {
    tracker.observe(msg, model);
  };
  const fed::TrainResult tr = fed::run_training(std::move(ex.model), tc, ex.train, ex.eval, hooks);
  Sink sink(rc.out, out);
  for (const auto& r : tracker.records()) attack::write_estimate_jsonl(sink.get(), r);
  const auto l2 = per_round_median(tracker.records(), attack::Method::kOption1, false);
  const auto cos = per_round_median(tracker.records(), attack::Method::kOption1, true);
  if (!l2.empty()) {
    const std::size_t q0 = l2.size() - std::max<std::size_t>(1, l2.size() / 4);
    double tail = 0.0;
    for (std::size_t i = q0; i < l2.size(); ++i) tail += l2[i];
    attack::write_summary_jsonl(sink.get(), "option1_first_l2_rel", l2.front());
    attack::write_summary_jsonl(sink.get(), "option1_final_quarter_l2_rel",
                                tail / static_cast<double>(l2.size() - q0));
    double max_cos = -1.0;
    for (double c : cos) max_cos = std::max(max_cos, c);
    attack::write_summary_jsonl(sink.get(), "option1_max_cosine", max_cos);
  }
  if (!tr.history.empty()) {
    attack::write_summary_jsonl(sink.get(), "final_accuracy", tr.history.back().eval_accuracy);
  }
  sink.finish();
  return kOk;
}

int cmd_attack_gm(const RunConfig& rc, std::ostream& out) {
  attack::GmExperimentConfig g;
  g.seed = rc.seed;
  if (rc.is_set("q") || rc.is_set("sketch_schedule")) g.q = rc.sketch_schedule.front();
  if (rc.is_set("lr")) g.lr = rc.lr;
  const attack::GmExperimentResult r = attack::run_gradient_matching_experiment(g);
  Sink sink(rc.out, out);
  attack::write_summary_jsonl(sink.get(), "mse_undefended", r.mse_undefended);
  attack::write_summary_jsonl(sink.get(), "mse_defended", r.mse_defended);
  attack::write_summary_jsonl(sink.get(), "objective_undefended", r.objective_undefended);
  attack::write_summary_jsonl(sink.get(), "objective_defended", r.objective_defended);
  sink.finish();
  return kOk;
}

int cmd_attack_pia(const RunConfig& rc, std::ostream& out) {
  attack::PiaConfig p;
  p.seed = rc.seed;
  if (rc.is_set("q") || rc.is_set("sketch_schedule")) p.q = rc.sketch_schedule.front();
  if (rc.is_set("rounds")) p.rounds = rc.rounds;
  if (rc.is_set("batch")) p.batch = rc.batch;
  if (rc.is_set("lr")) p.lr = rc.lr;
  const attack::PiaResult r = attack::run_property_inference(p);
  Sink sink(rc.out, out);
  attack::write_summary_jsonl(sink.get(), "auc_undefended", r.auc_undefended);
  attack::write_summary_jsonl(sink.get(), "auc_defended_client", r.auc_client);
  attack::write_summary_jsonl(sink.get(), "auc_defended_server", r.auc_server);
  sink.finish();
  return kOk;
}

int cmd_verify_theory(const RunConfig& rc, std::ostream& out) {
  const std::vector<theory::Check> checks = theory::run_suite(rc.seed);
  bool all = true;
  char line[256];
  for (const auto& c : checks) {
    std::snprintf(line, sizeof line, "%-28s %s  observed=%.6g expected=%.6g tol=%.3g\n",
                  c.name.c_str(), c.pass ? "PASS" : "FAIL", c.observed, c.expected, c.tolerance);
    out << line;
    all = all && c.pass;
  }
  if (!rc.out.empty()) {
    Sink sink(rc.out, out);
    for (const auto& c : checks) {
      nlohmann::ordered_json j;
      j["check"] = c.name;
      j["pass"] = c.pass;
      j["observed"] = c.observed;
      j["expected"] = c.expected;
      j["tolerance"] = c.tolerance;
      sink.get() << j.dump() << '\n';
    }
    sink.finish();
  }
  return all ? kOk : kRuntimeError;
}

int cmd_bench(const RunConfig& rc, std::ostream& out) {
  using Clock = std::chrono::steady_clock;
  auto ms = [](Clock::time_point a) {
    return std::chrono::duration<double, std::milli>(Clock::now() - a).count();
  };
  Rng rng(rc.seed);
  constexpr std::size_t n = 2048, d = 2048, s = 1024;
  Matrix x(n, d);
  for (double& v : x.data()) v = rng.normal();
  const sketch::SketchMatrix sk =
      sketch::generate({sketch::SketchDescriptor::countsketch(d, s), rng.next()});
  auto t0 = Clock::now();
  const Matrix fast = sketch::apply(x, sk);
  const double apply_ms = ms(t0);
  const Matrix dense_s = sketch::materialize(sk);
  t0 = Clock::now();
  const Matrix slow = matmul(x, dense_s);
  const double dense_ms = ms(t0);
  Sink sink(rc.out, out);
  auto record = [&](const char* name, double value) {
    nlohmann::ordered_json j;
    j["bench"] = name;
    j["value"] = value;
    sink.get() << j.dump() << '\n';
  };
  record("apply_ms", apply_ms);
  record("dense_matmul_ms", dense_ms);
  record("speedup", dense_ms / apply_ms);
  record("max_abs_diff", max_abs_diff(fast, slow));
  sink.finish();
  return kOk;
}

}  // namespace

// ---------------------------------------------------------------------------

std::span<const std::string_view> config_keys() { return kKeys; }

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig rc;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" +
                        std::string(line) + "'");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (rc.is_set(key)) throw ConfigError("duplicate key '" + key + "'");
    rc.set(key, trim(line.substr(eq + 1)));
  }
  return rc;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const std::string k(key);
  if (k == "algorithm") {
    fed::parse_algorithm(value);
    algorithm = value;
  } else if (k == "m") {
    m = parse_unsigned<std::size_t>(key, value);
  } else if (k == "c") {
    c = parse_real(key, value);
  } else if (k == "rounds") {
    rounds = parse_unsigned<std::size_t>(key, value);
  } else if (k == "local_epochs") {
    local_epochs = parse_unsigned<std::size_t>(key, value);
  } else if (k == "batch") {
    batch = parse_unsigned<std::size_t>(key, value);
  } else if (k == "lr") {
    lr = parse_real(key, value);
  } else if (k == "sketch_kind") {
    if (value != "none") {
      try {
        sketch::parse_sketch_kind(value);
      } catch (const InvalidSpecError&) {
        bad_value(key, value, "expected countsketch, uniform_sampling, permuted_countsketch or none");
      }
    }
    sketch_kind = value;
  } else if (k == "q" || k == "sketch_schedule") {
    const std::string other = k == "q" ? "sketch_schedule" : "q";
    if (is_set(other)) throw ConfigError("'q' and 'sketch_schedule' cannot both be given");
    auto list = k == "q" ? std::vector<std::size_t>{parse_unsigned<std::size_t>(key, value)}
                         : parse_list(key, value);
    if (list.empty()) bad_value(key, value, "expected at least one compression factor");
    sketch_schedule = std::move(list);
  } else if (k == "sketch_last_layer") {
    sketch_last_layer = parse_bool(key, value);
  } else if (k == "model") {
    if (value != "mlp" && value != "cnn" && value != "linear") {
      bad_value(key, value, "expected mlp, cnn or linear");
    }
    model = value;
  } else if (k == "hidden") {
    hidden = parse_list(key, value);
  } else if (k == "dataset") {
    if (value != "blobs" && value != "property" && !value.starts_with("idx:")) {
      bad_value(key, value, "expected blobs, property or idx:<images>,<labels>");
    }
    if (value.starts_with("idx:") && value.find(',') == std::string_view::npos) {
      bad_value(key, value, "idx datasets need both an image and a label file");
    }
    dataset = value;
  } else if (k == "samples") {
    samples = parse_unsigned<std::size_t>(key, value);
  } else if (k == "test_samples") {
    test_samples = parse_unsigned<std::size_t>(key, value);
  } else if (k == "dim") {
    dim = parse_unsigned<std::size_t>(key, value);
  } else if (k == "classes") {
    classes = parse_unsigned<std::size_t>(key, value);
  } else if (k == "mu") {
    mu = parse_real(key, value);
  } else if (k == "eval_every") {
    eval_every = parse_unsigned<std::size_t>(key, value);
  } else if (k == "seed") {
    seed = parse_unsigned<std::uint64_t>(key, value);
  } else if (k == "out") {
    out = value;
  } else {
    throw ConfigError("unknown key '" + k + "'");
  }
  explicit_keys.insert(k);
}

std::string RunConfig::emit() const {
  std::string s;
  auto line = [&](std::string_view k, const std::string& v) {
    s += k;
    s += v.empty() ? " =" : " = ";
    s += v;
    s += '\n';
  };
  line("algorithm", algorithm);
  line("m", std::to_string(m));
  line("c", format_real(c));
  line("rounds", std::to_string(rounds));
  line("local_epochs", std::to_string(local_epochs));
  line("batch", std::to_string(batch));
  line("lr", format_real(lr));
  line("sketch_kind", sketch_kind);
  if (sketch_schedule.size() == 1) {
    line("q", std::to_string(sketch_schedule.front()));
  } else {
    line("sketch_schedule", format_list(sketch_schedule));
  }
  line("sketch_last_layer", sketch_last_layer ? "true" : "false");
  line("model", model);
  line("hidden", format_list(hidden));
  line("dataset", dataset);
  line("samples", std::to_string(samples));
  line("test_samples", std::to_string(test_samples));
  line("dim", std::to_string(dim));
  line("classes", std::to_string(classes));
  line("mu", format_real(mu));
  line("eval_every", std::to_string(eval_every));
  line("seed", std::to_string(seed));
  line("out", out);
  return s;
}

fed::TrainConfig to_train_config(const RunConfig& rc, bool timing) {
  fed::TrainConfig tc;
  tc.clients = rc.m;
  tc.participation = rc.c;
  tc.algorithm = fed::parse_algorithm(rc.algorithm);
  tc.local_epochs = rc.local_epochs;
  tc.batch = rc.batch;
  tc.lr = rc.lr;
  if (rc.sketch_kind == "none") {
    tc.sketch_kind.reset();
  } else {
    tc.sketch_kind = sketch::parse_sketch_kind(rc.sketch_kind);
  }
  tc.q_schedule = rc.sketch_schedule;
  tc.rounds = rc.rounds;
  tc.eval_every = rc.eval_every;
  tc.seed = rc.seed;
  tc.timing = timing;
  tc.validate();
  return tc;
}

Experiment build_experiment(const RunConfig& rc) {
  Experiment ex;
  const std::uint64_t data_seed = derive_seed(rc.seed, 0, kDataStream);
  const std::uint64_t split_seed = derive_seed(rc.seed, 1, kDataStream);
  if (rc.samples == 0 || rc.test_samples == 0) {
    throw ConfigError("samples and test_samples must be positive");
  }
  if (rc.dataset == "blobs") {
    if (rc.classes < 2) throw ConfigError("classes must be at least 2");
    data::BlobsOptions bo;
    bo.mu = rc.mu;
    bo.classes = static_cast<int>(rc.classes);
    auto [tr, ev] = data::split(data::synth_blobs(rc.samples + rc.test_samples, rc.dim, data_seed, bo),
                                rc.samples, split_seed);
    ex.train = std::move(tr);
    ex.eval = std::move(ev);
  } else if (rc.dataset == "property") {
    data::PropertyOptions po;
    if (rc.is_set("mu")) po.mu = rc.mu;
    if (rc.dim < 2 * po.block) {
      throw ConfigError("dataset 'property' needs dim >= " + std::to_string(2 * po.block));
    }
    auto [tr, ev] =
        data::split(data::synth_property(rc.samples + rc.test_samples, rc.dim, data_seed, po),
                    rc.samples, split_seed);
    ex.train = std::move(tr);
    ex.eval = std::move(ev);
  } else {
    const std::string spec = rc.dataset.substr(4);
    const auto comma = spec.find(',');
    const data::Dataset all = data::load_idx(spec.substr(0, comma), spec.substr(comma + 1));
    if (all.size() < 2) throw DataError("idx dataset has fewer than two samples");
    const std::size_t n_train = std::min(rc.samples, all.size() - 1);
    auto [tr, rest] = data::split(all, n_train, split_seed);
    std::vector<std::size_t> keep(std::min(rc.test_samples, rest.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
    ex.train = std::move(tr);
    ex.eval = data::subset(rest, keep);
  }

  const std::size_t classes = static_cast<std::size_t>(ex.train.num_classes);
  const std::size_t outputs = classes == 2 ? 1 : classes;
  Rng rng(derive_seed(rc.seed, 0, kInitStream));
  if (rc.model == "linear") {
    ex.model = nn::make_mlp(ex.train.feature_dim(), {}, outputs, rc.sketch_last_layer, rng);
  } else if (rc.model == "mlp") {
    ex.model = nn::make_mlp(ex.train.feature_dim(), rc.hidden, outputs, rc.sketch_last_layer, rng);
  } else {
    ex.train.features = as_square_images(ex.train.features);
    ex.eval.features = as_square_images(ex.eval.features);
    const std::size_t hidden = rc.hidden.empty() ? 64 : rc.hidden.front();
    try {
      ex.model = nn::make_cnn(ex.train.features.shape(), 8, 16, 5, hidden, outputs,
                              rc.sketch_last_layer, rng);
    } catch (const DimensionError& e) {
      throw ConfigError(std::string("model 'cnn' does not fit the data: ") + e.what());
    }
  }
  return ex;
}

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sketched federated training and attack harness", "dbcl"};
  app.require_subcommand(1);
  Options o;
  const std::pair<const char*, const char*> commands[] = {
      {"train", "Federated training; writes per-round metrics"},
      {"attack-estimate", "Sketched training while a client estimates each update"},
      {"attack-gm", "Gradient-matching reconstruction, undefended and defended"},
      {"attack-pia", "Property inference against a two-client run"},
      {"verify-theory", "Enumeration and Monte Carlo checks of the error formulas"},
      {"bench", "Sketch application timing"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sc = app.add_subcommand(name, help);
    sc->add_option("--config", o.config, "Run configuration file");
    sc->add_option("--seed", o.seed, "Root seed (overrides the config)");
    sc->add_option("--set", o.sets, "Override one key: --set key=value")
        ->expected(1)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    sc->add_flag("--csv", o.csv, "Training metrics as CSV instead of JSON lines");
    sc->add_flag("--timing", o.timing, "Record wall-clock time per evaluation");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    const RunConfig rc = resolve(o);
    if (cmd == "train") return cmd_train(rc, o, out);
    if (cmd == "attack-estimate") return cmd_attack_estimate(rc, o, out);
    if (cmd == "attack-gm") return cmd_attack_gm(rc, out);
    if (cmd == "attack-pia") return cmd_attack_pia(rc, out);
    if (cmd == "verify-theory") return cmd_verify_theory(rc, out);
    return cmd_bench(rc, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace dbcl::cli
