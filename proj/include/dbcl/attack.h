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

#ifndef DBCL_ATTACK_H_
#define DBCL_ATTACK_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

#include "dbcl/fedsim.h"
#include "dbcl/linalg.h"
#include "dbcl/model.h"
#include "dbcl/sketch.h"

namespace dbcl::attack {

using sketch::SketchDescriptor;
using sketch::SketchMatrix;
using sketch::SketchPtr;
using sketch::SketchSpec;

// Sum of the other clients' directions in an unsketched round:
// m (W_old - W_new) - delta_k.
Matrix infer_peer_sum(std::size_t m, const Matrix& w_old, const Matrix& w_new,
                      const Matrix& delta_k);

enum class Method : std::uint8_t { kOption1 = 0, kOption2 = 1, kServerSide = 2 };
std::string_view to_string(Method m);

// What a participating client sees for one layer across two rounds.
struct AttackView {
  Matrix w_sketched_old;  // W_old S_old
  Matrix w_sketched_new;  // W_new S_new
  SketchSpec spec_old;
  SketchSpec spec_new;
};

struct GradEstimate {
  Matrix delta_hat;  // d_out x d_in
  Method method = Method::kOption1;
};

// option1: W~_old S_old^T - W~_new S_new^T; option2 uses pinv(S) instead of
// S^T. Throws ProtocolError if a descriptor disagrees with the observed
// shapes, and UnsupportedKindError for option2 on uniform sampling.
GradEstimate estimate_delta(const AttackView& view, Method method);
GradEstimate estimate_delta(const Matrix& w_sketched_old, const SketchMatrix& s_old,
                            const Matrix& w_sketched_new, const SketchMatrix& s_new, Method method);

// W~_old - W~_new; only meaningful as a broken baseline (needs equal s).
Matrix naive_difference(const Matrix& w_sketched_old, const Matrix& w_sketched_new);

struct AttackMetrics {
  double l2_rel = 0.0;
  double cosine = 0.0;
};
// Relative l2 error and normalized cosine of vec(delta_hat) against vec(delta).
// Throws UndefinedMetricError if either matrix is zero.
AttackMetrics attack_metrics(const Matrix& delta_hat, const Matrix& delta);

struct NoiseDecomposition {
  Matrix signal;  // (W_old - W_new) S_old S_old^T
  Matrix noise;   // W_new (S_old S_old^T - S_new S_new^T)
};
NoiseDecomposition noise_decomposition(const Matrix& w_old, const Matrix& w_new,
                                       const SketchMatrix& s_old, const SketchMatrix& s_new);

// E || delta_hat V^T - delta V^T ||_F^2 over independent CountSketches with s
// buckets for the option-1 estimate.
double expected_error_exact(const Matrix& w_old, const Matrix& w_new, const Matrix& v,
                            std::size_t s);
// V = I: ((d_in - 1) / s) (||W_old||^2 + ||W_new||^2).
double expected_error_identity(const Matrix& w_old, const Matrix& w_new, std::size_t s);

struct MonteCarloResult {
  double mean = 0.0;
  double stderr_ = 0.0;
};
// Trial t draws S_old and S_new from derive_seed(seed, t, 0) and
// derive_seed(seed, t, 1). Requires trials >= 2.
MonteCarloResult monte_carlo_error(const Matrix& w_old, const Matrix& w_new, const Matrix& v,
                                   std::size_t s, std::size_t trials, std::uint64_t seed);
// Same with V = I, without forming it.
MonteCarloResult monte_carlo_error_identity(const Matrix& w_old, const Matrix& w_new,
                                            std::size_t s, std::size_t trials,
                                            std::uint64_t seed);

// Server's estimate of a client's full gradient: gamma S^T.
Matrix server_side_estimate(const Matrix& gamma, const SketchMatrix& s);

// Rank-based (Mann-Whitney) AUC with ties counted half. Throws
// UndefinedMetricError unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Gradient matching.

struct ObservedGradient {
  Matrix weight;
  std::vector<double> bias;
};

struct GradientMatchingConfig {
  int label = 0;
  std::size_t restarts = 4;
  std::size_t iterations = 1500;
  double step = 0.05;  // Adam learning rate
  double fd_eps = 1e-4;
  std::uint64_t seed = 0;
  // Starting point of the first restart; later restarts draw N(0, I).
  std::optional<std::vector<double>> init;
};

struct GradientMatchingResult {
  std::vector<double> x_hat;  // lowest-objective iterate over all restarts
  std::vector<double> trace;  // objective of that restart, initial value first
  double objective = 0.0;
};

// Sum over parameter layers of squared differences between the gradient of
// the single-sample loss at (x, label) and the observation.
double matching_objective(const nn::Model& model, std::span<const ObservedGradient> observed,
                          std::span<const double> x, int label);

// Minimizes matching_objective over x with Adam on central finite-difference
// gradients. Throws DivergedAttackError if the objective becomes non-finite.
GradientMatchingResult gradient_matching_attack(const nn::Model& model,
                                                std::span<const ObservedGradient> observed,
                                                const GradientMatchingConfig& config);

// Mean squared error between two vectors of equal length.
double reconstruction_mse(std::span<const double> a, std::span<const double> b);

// One undefended and one defended reconstruction of a single 16-dim sample
// by a participant in a two-client dsgd round (Dense(hidden) -> ReLU ->
// Dense(classes)). Undefended: peer-sum subtraction recovers the victim's exact gradients.
// Defended: first-layer gradient from option-1 estimates, attacker's model
// uses W~_old S_old^T.
struct GmExperimentConfig {
  std::size_t input_dim = 16;
  std::size_t hidden = 32;
  std::size_t classes = 4;
  double lr = 0.1;
  std::size_t q = 2;
  GradientMatchingConfig attack;
  std::uint64_t seed = 0;
};
struct GmExperimentResult {
  double mse_undefended = 0.0;
  double mse_defended = 0.0;
  double input_variance = 1.0;
  double objective_undefended = 0.0;
  double objective_defended = 0.0;
};
GmExperimentResult run_gradient_matching_experiment(const GmExperimentConfig& config);

// ---------------------------------------------------------------------------
// Property inference.

struct LogisticConfig {
  double l2 = 1.0;  // penalty 0.5 * l2 * ||w||^2 / n on the mean log-loss
  std::size_t iterations = 500;
};

// Logistic regression on standardized features.
class LogisticModel {
 public:
  static LogisticModel fit(const std::vector<std::vector<double>>& x, std::span<const int> y,
                           const LogisticConfig& config);
  double decision(std::span<const double> x) const;

 private:
  std::vector<double> mean_;
  std::vector<double> inv_std_;
  std::vector<double> w_;
  double b_ = 0.0;
};

struct LabeledGradient {
  std::vector<double> features;  // flattened gradient estimate
  int property = 0;
};

// Trains on the attacker's own labeled gradients, scores the victim stream,
// and returns the AUC over the stream.
double property_inference_attack(std::span<const LabeledGradient> victim_stream,
                                 std::span<const LabeledGradient> attacker_data,
                                 const LogisticConfig& config);

struct PiaConfig {
  std::size_t dim = 32;
  std::size_t hidden = 16;
  std::size_t rounds = 400;
  std::size_t batch = 32;
  double lr = 0.05;
  std::size_t q = 2;
  double victim_property_rate = 0.2;
  std::size_t attacker_positive_per_round = 2;
  std::size_t attacker_negative_per_round = 8;
  double mu = 2.0;
  double delta = 1.5;
  std::size_t pool = 4000;  // samples per pool
  LogisticConfig logistic;
  std::uint64_t seed = 0;
};

struct PiaResult {
  double auc_undefended = 0.0;
  double auc_client = 0.0;  // defended, client-side attacker (option-1 estimates)
  double auc_server = 0.0;  // defended, server-side attacker (gamma S^T)
  double self_auc = 0.0;    // attack model on its own training data (defended run)
  std::size_t victim_rounds = 0;
  std::size_t victim_positive = 0;
};
// Two-client dsgd runs (client 0 attacks, client 1 is the victim), once
// without sketching and once with CountSketch compression q on the first
// layer. Features are the first layer's full-size gradient estimates.
PiaResult run_property_inference(const PiaConfig& config);

// ---------------------------------------------------------------------------
// Estimator tracking during training.

struct EstimateRecord {
  std::size_t round = 0;  // index of the update being estimated (1-based)
  std::size_t layer = 0;
  Method method = Method::kOption1;
  double l2_rel = 0.0;
  double cosine = 0.0;
};

// Feed with every broadcast of a run (fed::RoundHooks::on_broadcast). For
// each pair of consecutive broadcasts it compares option-1 and option-2
// estimates against the true change of every sketched layer.
class EstimateTracker {
 public:
  void observe(const fed::RoundMsgDown& msg, const nn::Model& model);
  const std::vector<EstimateRecord>& records() const { return records_; }

 private:
  std::optional<fed::RoundMsgDown> prev_msg_;
  std::optional<nn::Model> prev_model_;
  std::vector<EstimateRecord> records_;
};

// Per-round median over layers of l2_rel or cosine for one method.
std::vector<double> per_round_median(std::span<const EstimateRecord> records, Method method,
                                     bool cosine);

void write_estimate_jsonl(std::ostream& out, const EstimateRecord& r);
// {"summary": metric, "value": value}
void write_summary_jsonl(std::ostream& out, std::string_view metric, double value);

}  // namespace dbcl::attack

#endif  // DBCL_ATTACK_H_
