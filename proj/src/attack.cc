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

#include "dbcl/attack.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include <json.hpp>

#include "dbcl/errors.h"
#include "dbcl/parallel.h"
#include "dbcl/rng.h"

namespace dbcl::attack {
namespace {

constexpr std::uint64_t kVictimStream = 0x71C7;
constexpr std::uint64_t kAttackerStream = 0xA77C;
constexpr std::uint64_t kRestartStream = 0x4E57;
constexpr std::uint64_t kModelStream = 0x30DE;
constexpr std::uint64_t kPoolStream = 0x9001;

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + " differ");
  }
}

Matrix row_matrix(std::span<const double> v) {
  return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

std::size_t sketch_columns(const SketchDescriptor& d) {
  return d.kind == sketch::SketchKind::kPermutedCountSketch ? d.d / d.q : d.s;
}

SketchMatrix generate_checked(const SketchSpec& spec, const Matrix& w_sketched,
                              const char* which) {
  if (sketch_columns(spec.desc) != w_sketched.cols()) {
    throw ProtocolError(std::string("estimate_delta: ") + which + " descriptor has s=" +
                        std::to_string(sketch_columns(spec.desc)) + " but sketched weight has " +
                        std::to_string(w_sketched.cols()) + " columns");
  }
  SketchMatrix s = sketch::generate(spec);
  if (s.s() != w_sketched.cols()) {
    throw ProtocolError(std::string("estimate_delta: ") + which +
                        " sketch does not match sketched weight");
  }
  return s;
}

// ||(delta_hat - delta) V^T||^2 for one (S_old, S_new) draw; V null means I.
double trial_error(const Matrix& w_old, const Matrix& w_new, const Matrix* v,
                   const SketchMatrix& s_old, const SketchMatrix& s_new) {
  Matrix err = sketch::apply_transpose(sketch::apply(w_old, s_old), s_old);
  err -= sketch::apply_transpose(sketch::apply(w_new, s_new), s_new);
  err -= w_old;
  err += w_new;
  if (v == nullptr) return frobenius_norm_sq(err);
  return frobenius_norm_sq(matmul_nt(err, *v));
}

MonteCarloResult monte_carlo_impl(const Matrix& w_old, const Matrix& w_new, const Matrix* v,
                                  std::size_t s, std::size_t trials, std::uint64_t seed) {
  require_same_shape(w_old, w_new, "monte_carlo_error");
  if (v != nullptr && v->cols() != w_old.cols()) {
    throw DimensionError("monte_carlo_error: V has " + std::to_string(v->cols()) +
                         " columns, expected " + std::to_string(w_old.cols()));
  }
  if (trials < 2) throw InvalidSpecError("monte_carlo_error: need at least 2 trials");
  const auto desc = SketchDescriptor::countsketch(w_old.cols(), s);
  std::vector<double> errs(trials);
  parallel_for(trials, [&](std::size_t t) {
    const SketchMatrix s_old = sketch::generate({desc, derive_seed(seed, t, 0)});
    const SketchMatrix s_new = sketch::generate({desc, derive_seed(seed, t, 1)});
    errs[t] = trial_error(w_old, w_new, v, s_old, s_new);
  });
  const double n = static_cast<double>(trials);
  const double mean = std::accumulate(errs.begin(), errs.end(), 0.0) / n;
  double ss = 0.0;
  for (double e : errs) ss += (e - mean) * (e - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

std::vector<double> flatten(const Matrix& m) {
  auto d = m.data();
  return {d.begin(), d.end()};
}

std::vector<int> batch_labels(const data::Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<int> y;
  y.reserve(idx.size());
  for (std::size_t i : idx) y.push_back(ds.labels[i]);
  return y;
}

std::vector<std::size_t> draw_batch(Rng& rng, std::size_t n, std::size_t b) {
  std::vector<std::size_t> idx(b);
  for (auto& i : idx) i = rng.below(n);
  return idx;
}

}  // namespace

Matrix infer_peer_sum(std::size_t m, const Matrix& w_old, const Matrix& w_new,
                      const Matrix& delta_k) {
  require_same_shape(w_old, w_new, "infer_peer_sum");
  require_same_shape(w_old, delta_k, "infer_peer_sum");
  Matrix out = w_old - w_new;
  out *= static_cast<double>(m);
  out -= delta_k;
  return out;
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kOption1:
      return "option1";
    case Method::kOption2:
      return "option2";
    case Method::kServerSide:
      return "server_side";
  }
  return "unknown";
}

GradEstimate estimate_delta(const AttackView& view, Method method) {
  if (view.spec_old.desc.d != view.spec_new.desc.d) {
    throw ProtocolError("estimate_delta: sketches disagree on d_in");
  }
  const SketchMatrix s_old = generate_checked(view.spec_old, view.w_sketched_old, "old");
  const SketchMatrix s_new = generate_checked(view.spec_new, view.w_sketched_new, "new");
  return estimate_delta(view.w_sketched_old, s_old, view.w_sketched_new, s_new, method);
}

GradEstimate estimate_delta(const Matrix& w_sketched_old, const SketchMatrix& s_old,
                            const Matrix& w_sketched_new, const SketchMatrix& s_new,
                            Method method) {
  if (w_sketched_old.rows() != w_sketched_new.rows()) {
    throw DimensionError("estimate_delta: sketched weights have different row counts");
  }
  if (s_old.d() != s_new.d()) throw ProtocolError("estimate_delta: sketches disagree on d_in");
  switch (method) {
    case Method::kOption1:
      return {sketch::apply_transpose(w_sketched_old, s_old) -
                  sketch::apply_transpose(w_sketched_new, s_new),
              method};
    case Method::kOption2:
      return {sketch::apply_pinv(w_sketched_old, s_old) - sketch::apply_pinv(w_sketched_new, s_new),
              method};
    case Method::kServerSide:
      break;
  }
  throw UnsupportedKindError("estimate_delta: server-side estimates come from gamma, not weights");
}

Matrix naive_difference(const Matrix& w_sketched_old, const Matrix& w_sketched_new) {
  require_same_shape(w_sketched_old, w_sketched_new, "naive_difference");
  return w_sketched_old - w_sketched_new;
}

AttackMetrics attack_metrics(const Matrix& delta_hat, const Matrix& delta) {
  require_same_shape(delta_hat, delta, "attack_metrics");
  const double nd = std::sqrt(frobenius_norm_sq(delta));
  const double nh = std::sqrt(frobenius_norm_sq(delta_hat));
  if (nd == 0.0) throw UndefinedMetricError("attack_metrics: true difference is zero");
  if (nh == 0.0) throw UndefinedMetricError("attack_metrics: estimate is zero");
  AttackMetrics out;
  out.l2_rel = std::sqrt(frobenius_norm_sq(delta_hat - delta)) / nd;
  out.cosine = std::clamp(frobenius_dot(delta_hat, delta) / (nh * nd), -1.0, 1.0);
  return out;
}

NoiseDecomposition noise_decomposition(const Matrix& w_old, const Matrix& w_new,
                                       const SketchMatrix& s_old, const SketchMatrix& s_new) {
  require_same_shape(w_old, w_new, "noise_decomposition");
  NoiseDecomposition out;
  out.signal = sketch::apply_transpose(sketch::apply(w_old - w_new, s_old), s_old);
  out.noise = sketch::apply_transpose(sketch::apply(w_new, s_old), s_old) -
              sketch::apply_transpose(sketch::apply(w_new, s_new), s_new);
  return out;
}

double expected_error_exact(const Matrix& w_old, const Matrix& w_new, const Matrix& v,
                            std::size_t s) {
  require_same_shape(w_old, w_new, "expected_error_exact");
  // The two sketches are independent and each term is zero-mean, so the
  // cross term vanishes.
  return sketch::product_error_expectation(w_old, v, s) +
         sketch::product_error_expectation(w_new, v, s);
}

double expected_error_identity(const Matrix& w_old, const Matrix& w_new, std::size_t s) {
  require_same_shape(w_old, w_new, "expected_error_identity");
  if (s == 0) throw InvalidSpecError("expected_error_identity: s must be positive");
  const double d = static_cast<double>(w_old.cols());
  return (d - 1.0) / static_cast<double>(s) * (frobenius_norm_sq(w_old) + frobenius_norm_sq(w_new));
}

MonteCarloResult monte_carlo_error(const Matrix& w_old, const Matrix& w_new, const Matrix& v,
                                   std::size_t s, std::size_t trials, std::uint64_t seed) {
  return monte_carlo_impl(w_old, w_new, &v, s, trials, seed);
}

MonteCarloResult monte_carlo_error_identity(const Matrix& w_old, const Matrix& w_new,
                                            std::size_t s, std::size_t trials,
                                            std::uint64_t seed) {
  return monte_carlo_impl(w_old, w_new, nullptr, s, trials, seed);
}

Matrix server_side_estimate(const Matrix& gamma, const SketchMatrix& s) {
  return sketch::apply_transpose(gamma, s);
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in size");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) throw UndefinedMetricError("auc: need both classes");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

// ---------------------------------------------------------------------------

namespace {

class Matcher {
 public:
  Matcher(const nn::Model& model, std::span<const ObservedGradient> observed, int label)
      : arch_(model.architecture()),
        params_(nn::plain_parameters(model)),
        observed_(observed),
        label_(label) {
    if (observed.size() != params_.size()) {
      throw DimensionError("gradient matching: expected " + std::to_string(params_.size()) +
                           " observed layers, got " + std::to_string(observed.size()));
    }
    for (std::size_t l = 0; l < params_.size(); ++l) {
      require_same_shape(observed[l].weight, params_[l].weight, "gradient matching");
      if (observed[l].bias.size() != params_[l].bias.size()) {
        throw DimensionError("gradient matching: bias size mismatch at layer " +
                             std::to_string(l));
      }
    }
    dim_ = params_.front().weight.cols();
  }

  std::size_t dim() const { return dim_; }

  double operator()(std::span<const double> x) const {
    if (x.size() != dim_) throw DimensionError("gradient matching: input has wrong length");
    const Tensor4 input = Tensor4::from_matrix(row_matrix(x));
    const int label[1] = {label_};
    const nn::PassResult r = nn::train_pass(arch_, params_, input, label);
    double f = 0.0;
    for (std::size_t l = 0; l < params_.size(); ++l) {
      f += frobenius_norm_sq(r.grads[l].gamma - observed_[l].weight);
      for (std::size_t i = 0; i < observed_[l].bias.size(); ++i) {
        const double d = r.grads[l].grad_bias[i] - observed_[l].bias[i];
        f += d * d;
      }
    }
    return f;
  }

 private:
  nn::Architecture arch_;
  std::vector<nn::ParamBlock> params_;
  std::span<const ObservedGradient> observed_;
  int label_;
  std::size_t dim_ = 0;
};

double checked(double f) {
  if (!std::isfinite(f)) throw DivergedAttackError("gradient matching: objective is not finite");
  return f;
}

}  // namespace

double matching_objective(const nn::Model& model, std::span<const ObservedGradient> observed,
                          std::span<const double> x, int label) {
  return Matcher(model, observed, label)(x);
}

GradientMatchingResult gradient_matching_attack(const nn::Model& model,
                                                std::span<const ObservedGradient> observed,
                                                const GradientMatchingConfig& config) {
  const Matcher f(model, observed, config.label);
  const std::size_t d = f.dim();
  if (config.restarts == 0) throw ConfigError("gradient matching: restarts must be positive");
  if (config.init && config.init->size() != d) {
    throw DimensionError("gradient matching: init has wrong length");
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  Rng rng(derive_seed(config.seed, 0, kRestartStream));

  GradientMatchingResult best;
  bool have_best = false;
  for (std::size_t r = 0; r < config.restarts; ++r) {
    std::vector<double> x(d);
    if (r == 0 && config.init) {
      x = *config.init;
    } else {
      for (auto& v : x) v = rng.normal();
    }
    std::vector<double> m(d, 0.0), v(d, 0.0), g(d);
    std::vector<double> trace;
    trace.reserve(config.iterations + 1);
    trace.push_back(checked(f(x)));
    std::vector<double> best_x = x;
    double best_f = trace.back();
    double b1t = 1.0, b2t = 1.0;
    for (std::size_t t = 0; t < config.iterations; ++t) {
      for (std::size_t i = 0; i < d; ++i) {
        const double xi = x[i];
        x[i] = xi + config.fd_eps;
        const double hi = checked(f(x));
        x[i] = xi - config.fd_eps;
        const double lo = checked(f(x));
        x[i] = xi;
        g[i] = (hi - lo) / (2.0 * config.fd_eps);
      }
      b1t *= kBeta1;
      b2t *= kBeta2;
      for (std::size_t i = 0; i < d; ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
        x[i] -= config.step * (m[i] / (1.0 - b1t)) / (std::sqrt(v[i] / (1.0 - b2t)) + kEps);
      }
      trace.push_back(checked(f(x)));
      if (trace.back() < best_f) {
        best_f = trace.back();
        best_x = x;
      }
    }
    if (!have_best || best_f < best.objective) {
      best.x_hat = std::move(best_x);
      best.objective = best_f;
      best.trace = std::move(trace);
      have_best = true;
    }
  }
  return best;
}

double reconstruction_mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw DimensionError("reconstruction_mse: vectors must be non-empty and equal in length");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

namespace {

struct GmRun {
  double mse = 0.0;
  double objective = 0.0;
};

GmRun gm_single(const GmExperimentConfig& cfg, bool defended) {
  Rng model_rng(derive_seed(cfg.seed, 0, kModelStream));
  const std::size_t hidden[1] = {cfg.hidden};
  nn::Model model = nn::make_mlp(cfg.input_dim, hidden, cfg.classes, false, model_rng);

  Rng vrng(derive_seed(cfg.seed, 0, kVictimStream));
  std::vector<double> x0(cfg.input_dim);
  for (auto& v : x0) v = vrng.normal();
  const int y0 = static_cast<int>(vrng.below(cfg.classes));
  Rng arng(derive_seed(cfg.seed, 0, kAttackerStream));
  std::vector<double> xa(cfg.input_dim);
  for (auto& v : xa) v = arng.normal();
  const int ya = static_cast<int>(arng.below(cfg.classes));

  fed::TrainConfig tc;
  tc.clients = 2;
  tc.algorithm = fed::Algorithm::kDsgd;
  tc.batch = 1;
  tc.lr = cfg.lr;
  tc.rounds = 1;
  tc.seed = cfg.seed;
  tc.q_schedule = {cfg.q};
  if (!defended) tc.sketch_kind.reset();
  fed::ServerState server = fed::make_server(model, tc);

  const fed::RoundMsgDown msg0 = fed::broadcast_round(server);
  const std::vector<SketchPtr> s_old = fed::reconstruct_sketches(msg0);
  const int label_a[1] = {ya};
  const int label_v[1] = {y0};
  std::vector<fed::RoundMsgUp> ups;
  ups.push_back(fed::client_round_dsgd(0, msg0, Tensor4::from_matrix(row_matrix(xa)), label_a));
  ups.push_back(fed::client_round_dsgd(1, msg0, Tensor4::from_matrix(row_matrix(x0)), label_v));
  fed::aggregate_and_update(server, ups);
  const fed::RoundMsgDown msg1 = fed::broadcast_round(server);
  const std::vector<SketchPtr> s_new = fed::reconstruct_sketches(msg1);

  // Everything below uses only what client 0 sees: msg0, msg1, its own upload.
  const double m = 2.0;
  const fed::RoundMsgUp& own = ups[0];
  std::vector<ObservedGradient> observed(msg0.layers.size());
  nn::Model belief = model;
  for (std::size_t l = 0; l < msg0.layers.size(); ++l) {
    const auto& old_l = msg0.layers[l];
    const auto& new_l = msg1.layers[l];
    Matrix own_delta = nn::expand_gradient(own.layers[l].weight, s_old[l].get());
    own_delta *= cfg.lr;
    Matrix peer;
    if (s_old[l]) {
      peer = estimate_delta(old_l.weight, *s_old[l], new_l.weight, *s_new[l], Method::kOption1)
                 .delta_hat;
      peer *= m;
      peer -= own_delta;
      belief.weight(l) = sketch::apply_transpose(old_l.weight, *s_old[l]);
    } else {
      peer = infer_peer_sum(2, old_l.weight, new_l.weight, own_delta);
      belief.weight(l) = old_l.weight;
    }
    peer *= 1.0 / cfg.lr;
    Matrix own_bias = row_matrix(own.layers[l].bias);
    own_bias *= cfg.lr;
    Matrix peer_bias = infer_peer_sum(2, row_matrix(old_l.bias), row_matrix(new_l.bias), own_bias);
    peer_bias *= 1.0 / cfg.lr;
    observed[l].weight = std::move(peer);
    observed[l].bias = flatten(peer_bias);
    belief.bias(l) = old_l.bias;
  }

  GradientMatchingConfig ac = cfg.attack;
  ac.label = y0;
  const GradientMatchingResult r = gradient_matching_attack(belief, observed, ac);
  return {reconstruction_mse(r.x_hat, x0), r.objective};
}

}  // namespace

GmExperimentResult run_gradient_matching_experiment(const GmExperimentConfig& config) {
  const GmRun und = gm_single(config, false);
  const GmRun def = gm_single(config, true);
  GmExperimentResult out;
  out.mse_undefended = und.mse;
  out.mse_defended = def.mse;
  out.objective_undefended = und.objective;
  out.objective_defended = def.objective;
  return out;
}

// ---------------------------------------------------------------------------

LogisticModel LogisticModel::fit(const std::vector<std::vector<double>>& x,
                                 std::span<const int> y, const LogisticConfig& config) {
  if (x.empty() || x.size() != y.size()) {
    throw DimensionError("logistic regression: need matching non-empty features and labels");
  }
  const std::size_t n = x.size();
  const std::size_t d = x.front().size();
  for (const auto& row : x) {
    if (row.size() != d) throw DimensionError("logistic regression: ragged feature rows");
  }
  LogisticModel lm;
  lm.mean_.assign(d, 0.0);
  lm.inv_std_.assign(d, 0.0);
  for (const auto& row : x)
    for (std::size_t j = 0; j < d; ++j) lm.mean_[j] += row[j];
  for (auto& v : lm.mean_) v /= static_cast<double>(n);
  std::vector<double> var(d, 0.0);
  for (const auto& row : x)
    for (std::size_t j = 0; j < d; ++j) var[j] += (row[j] - lm.mean_[j]) * (row[j] - lm.mean_[j]);
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(var[j] / static_cast<double>(n));
    lm.inv_std_[j] = sd > 0.0 ? 1.0 / sd : 0.0;
  }
  Matrix z(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) z(i, j) = (x[i][j] - lm.mean_[j]) * lm.inv_std_[j];

  const double nn_ = static_cast<double>(n);
  const double lambda = config.l2 / nn_;

  // Lipschitz bound of the mean log-loss: largest eigenvalue of [Z 1]^T [Z 1] / (4n),
  // by power iteration.
  std::vector<double> u(d + 1, 1.0), zu(n);
  double eig = 1.0;
  for (int it = 0; it < 50; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = u[d];
      for (std::size_t j = 0; j < d; ++j) s += z(i, j) * u[j];
      zu[i] = s;
    }
    std::vector<double> w(d + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) w[j] += z(i, j) * zu[i];
      w[d] += zu[i];
    }
    double norm = 0.0;
    for (double v : w) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    eig = norm;
    for (std::size_t j = 0; j <= d; ++j) u[j] = w[j] / norm;
  }
  const double step = 1.0 / (eig / (4.0 * nn_) + lambda);

  // Nesterov accelerated gradient descent on (w, b).
  std::vector<double> w(d + 1, 0.0), prev = w, look = w, grad(d + 1), margin(n);
  for (std::size_t it = 1; it <= config.iterations; ++it) {
    const double mom = static_cast<double>(it - 1) / static_cast<double>(it + 2);
    for (std::size_t j = 0; j <= d; ++j) look[j] = w[j] + mom * (w[j] - prev[j]);
    for (std::size_t i = 0; i < n; ++i) {
      double s = look[d];
      for (std::size_t j = 0; j < d; ++j) s += z(i, j) * look[j];
      margin[i] = 1.0 / (1.0 + std::exp(-s)) - (y[i] != 0 ? 1.0 : 0.0);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) grad[j] += z(i, j) * margin[i];
      grad[d] += margin[i];
    }
    prev = w;
    for (std::size_t j = 0; j <= d; ++j) {
      double gj = grad[j] / nn_;
      if (j < d) gj += lambda * look[j];
      w[j] = look[j] - step * gj;
    }
  }
  lm.b_ = w[d];
  w.pop_back();
  lm.w_ = std::move(w);
  return lm;
}

double LogisticModel::decision(std::span<const double> x) const {
  if (x.size() != w_.size()) throw DimensionError("logistic regression: feature length mismatch");
  double s = b_;
  for (std::size_t j = 0; j < x.size(); ++j) s += (x[j] - mean_[j]) * inv_std_[j] * w_[j];
  return s;
}

double property_inference_attack(std::span<const LabeledGradient> victim_stream,
                                 std::span<const LabeledGradient> attacker_data,
                                 const LogisticConfig& config) {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (const auto& g : attacker_data) {
    x.push_back(g.features);
    y.push_back(g.property);
  }
  const LogisticModel lm = LogisticModel::fit(x, y, config);
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& g : victim_stream) {
    scores.push_back(lm.decision(g.features));
    labels.push_back(g.property);
  }
  return auc(scores, labels);
}

namespace {

struct PiaStreams {
  std::vector<LabeledGradient> training;
  std::vector<LabeledGradient> client;
  std::vector<LabeledGradient> server;
};

PiaStreams collect_pia(const PiaConfig& cfg, bool sketched) {
  data::PropertyOptions po;
  po.mu = cfg.mu;
  po.delta = cfg.delta;
  auto pool = [&](std::uint64_t which, double rate) {
    po.property_rate = rate;
    return data::synth_property(cfg.pool, cfg.dim, derive_seed(cfg.seed, which, kPoolStream), po);
  };
  const data::Dataset victim_pos = pool(0, 1.0);
  const data::Dataset victim_neg = pool(1, 0.0);
  const data::Dataset attacker_pos = pool(2, 1.0);
  const data::Dataset attacker_neg = pool(3, 0.0);
  const data::Dataset attacker_own = pool(4, 0.5);

  Rng model_rng(derive_seed(cfg.seed, 0, kModelStream));
  const std::size_t hidden[1] = {cfg.hidden};
  nn::Model model = nn::make_mlp(cfg.dim, hidden, 1, false, model_rng);

  fed::TrainConfig tc;
  tc.clients = 2;
  tc.algorithm = fed::Algorithm::kDsgd;
  tc.batch = cfg.batch;
  tc.lr = cfg.lr;
  tc.rounds = cfg.rounds;
  tc.seed = cfg.seed;
  tc.q_schedule = {cfg.q};
  if (!sketched) tc.sketch_kind.reset();
  fed::ServerState server = fed::make_server(std::move(model), tc);

  Rng vrng(derive_seed(cfg.seed, 0, kVictimStream));
  Rng arng(derive_seed(cfg.seed, 0, kAttackerStream));
  auto batch_of = [&](const data::Dataset& ds, Rng& rng) {
    const auto idx = draw_batch(rng, ds.size(), cfg.batch);
    return std::pair{data::gather_features(ds.features, idx), batch_labels(ds, idx)};
  };

  PiaStreams out;
  fed::RoundMsgDown msg = fed::broadcast_round(server);
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    const std::vector<SketchPtr> s_old = fed::reconstruct_sketches(msg);
    const SketchMatrix* s0 = s_old[0].get();

    const int victim_prop = vrng.uniform() < cfg.victim_property_rate ? 1 : 0;
    const auto [xv, yv] = batch_of(victim_prop ? victim_pos : victim_neg, vrng);
    const auto [xa, ya] = batch_of(attacker_own, arng);
    std::vector<fed::RoundMsgUp> ups;
    ups.push_back(fed::client_round_dsgd(0, msg, xa, ya));
    ups.push_back(fed::client_round_dsgd(1, msg, xv, yv));

    auto own_features = [&](const data::Dataset& ds, int prop) {
      const auto [x, y] = batch_of(ds, arng);
      const fed::RoundMsgUp g = fed::client_round_dsgd(0, msg, x, y);
      out.training.push_back({flatten(nn::expand_gradient(g.layers[0].weight, s0)), prop});
    };
    for (std::size_t i = 0; i < cfg.attacker_positive_per_round; ++i) own_features(attacker_pos, 1);
    for (std::size_t i = 0; i < cfg.attacker_negative_per_round; ++i) own_features(attacker_neg, 0);

    out.server.push_back(
        {flatten(nn::expand_gradient(ups[1].layers[0].weight, s0)), victim_prop});

    fed::aggregate_and_update(server, ups);
    fed::RoundMsgDown next = fed::broadcast_round(server);

    Matrix own_delta = nn::expand_gradient(ups[0].layers[0].weight, s0);
    own_delta *= cfg.lr;
    Matrix est;
    if (sketched) {
      const std::vector<SketchPtr> s_new = fed::reconstruct_sketches(next);
      est = estimate_delta(msg.layers[0].weight, *s0, next.layers[0].weight, *s_new[0],
                           Method::kOption1)
                .delta_hat;
      est *= 2.0;
      est -= own_delta;
    } else {
      est = infer_peer_sum(2, msg.layers[0].weight, next.layers[0].weight, own_delta);
    }
    est *= 1.0 / cfg.lr;
    out.client.push_back({flatten(est), victim_prop});
    msg = std::move(next);
  }
  return out;
}

}  // namespace

PiaResult run_property_inference(const PiaConfig& config) {
  PiaResult r;
  {
    const PiaStreams und = collect_pia(config, false);
    r.auc_undefended = property_inference_attack(und.client, und.training, config.logistic);
  }
  const PiaStreams def = collect_pia(config, true);
  r.auc_client = property_inference_attack(def.client, def.training, config.logistic);
  r.auc_server = property_inference_attack(def.server, def.training, config.logistic);
  r.self_auc = property_inference_attack(def.training, def.training, config.logistic);
  r.victim_rounds = def.client.size();
  for (const auto& g : def.client) r.victim_positive += static_cast<std::size_t>(g.property);
  return r;
}

// ---------------------------------------------------------------------------

void EstimateTracker::observe(const fed::RoundMsgDown& msg, const nn::Model& model) {
  if (prev_msg_) {
    if (prev_msg_->layers.size() != msg.layers.size()) {
      throw ProtocolError("estimate tracker: layer count changed between rounds");
    }
    const std::vector<SketchPtr> s_old = fed::reconstruct_sketches(*prev_msg_);
    const std::vector<SketchPtr> s_new = fed::reconstruct_sketches(msg);
    for (std::size_t l = 0; l < msg.layers.size(); ++l) {
      if (!s_old[l] || !s_new[l]) continue;
      const Matrix delta = prev_model_->weight(l) - model.weight(l);
      if (frobenius_norm_sq(delta) == 0.0) continue;
      for (Method method : {Method::kOption1, Method::kOption2}) {
        if (method == Method::kOption2 && (!s_old[l]->is_countsketch() || !s_new[l]->is_countsketch())) {
          continue;
        }
        const GradEstimate est = estimate_delta(prev_msg_->layers[l].weight, *s_old[l],
                                                msg.layers[l].weight, *s_new[l], method);
        const AttackMetrics am = attack_metrics(est.delta_hat, delta);
        records_.push_back({msg.round, l, method, am.l2_rel, am.cosine});
      }
    }
  }
  prev_msg_ = msg;
  prev_model_ = model;
}

std::vector<double> per_round_median(std::span<const EstimateRecord> records, Method method,
                                     bool cosine) {
  std::map<std::size_t, std::vector<double>> by_round;
  for (const auto& r : records) {
    if (r.method == method) by_round[r.round].push_back(cosine ? r.cosine : r.l2_rel);
  }
  std::vector<double> out;
  for (auto& [round, v] : by_round) {
    std::sort(v.begin(), v.end());
    const std::size_t k = v.size();
    out.push_back(k % 2 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]));
  }
  return out;
}

void write_estimate_jsonl(std::ostream& out, const EstimateRecord& r) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  j["layer"] = r.layer;
  j["method"] = std::string(to_string(r.method));
  j["l2_rel"] = r.l2_rel;
  j["cosine"] = r.cosine;
  out << j.dump() << '\n';
}

void write_summary_jsonl(std::ostream& out, std::string_view metric, double value) {
  nlohmann::ordered_json j;
  j["summary"] = std::string(metric);
  j["value"] = value;
  out << j.dump() << '\n';
}

}  // namespace dbcl::attack
