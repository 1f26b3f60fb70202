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

#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "dbcl/errors.h"
#include "test_util.h"

namespace dbcl::attack {
namespace {

using dbcl::testing::for_each_countsketch;
using dbcl::testing::identity_sketch;
using dbcl::testing::naive_matmul;
using dbcl::testing::naive_transpose;
using dbcl::testing::random_int_matrix;
using dbcl::testing::random_matrix;

// W S S^T through dense products only.
Matrix dense_project(const Matrix& w, const SketchMatrix& s) {
  const Matrix sd = sketch::materialize(s);
  return naive_matmul(naive_matmul(w, sd), naive_transpose(sd));
}

double max_abs(const Matrix& m) {
  double r = 0.0;
  for (double v : m.data()) r = std::max(r, std::abs(v));
  return r;
}

SketchMatrix two_by_one(std::int8_t a, std::int8_t b) {
  return SketchMatrix::from_hashing(1, {0, 0}, {a, b});
}

// ---------------------------------------------------------------------------

TEST(PeerSumTest, ThreeClientArithmetic) {
  const Matrix r = infer_peer_sum(3, Matrix{{2.0}}, Matrix{{1.0}}, Matrix{{0.5}});
  EXPECT_DOUBLE_EQ(r(0, 0), 2.5);
}

TEST(PeerSumTest, IdleVictimGivesZero) {
  Rng rng(1);
  const Matrix w_old = random_matrix(3, 4, rng);
  const Matrix w_new = random_matrix(3, 4, rng);
  Matrix dk = w_old - w_new;
  dk *= 2.0;
  EXPECT_EQ(max_abs(infer_peer_sum(2, w_old, w_new, dk)), 0.0);
}

TEST(PeerSumTest, MatchesSimulatedUnsketchedRound) {
  Rng rng(2);
  const std::size_t hidden[] = {6};
  nn::Model model = nn::make_mlp(5, hidden, 3, false, rng);
  fed::TrainConfig cfg;
  cfg.clients = 4;
  cfg.algorithm = fed::Algorithm::kDsgd;
  cfg.lr = 0.2;
  cfg.sketch_kind.reset();
  fed::ServerState server = fed::make_server(model, cfg);
  const fed::RoundMsgDown msg = fed::broadcast_round(server);
  std::vector<fed::RoundMsgUp> ups;
  for (std::size_t i = 0; i < 4; ++i) {
    const Tensor4 x = Tensor4::from_matrix(random_matrix(3, 5, rng));
    const std::vector<int> y = {static_cast<int>(i % 3), 1, 2};
    ups.push_back(fed::client_round_dsgd(i, msg, x, y));
  }
  fed::aggregate_and_update(server, ups);
  for (std::size_t l = 0; l < model.param_layer_count(); ++l) {
    Matrix direct(ups[0].layers[l].weight.rows(), ups[0].layers[l].weight.cols());
    for (std::size_t i = 1; i < 4; ++i) direct += cfg.lr * ups[i].layers[l].weight;
    const Matrix own = cfg.lr * ups[0].layers[l].weight;
    const Matrix peer = infer_peer_sum(4, model.weight(l), server.model.weight(l), own);
    EXPECT_LE(max_abs(peer - direct), 1e-12) << "layer " << l;
  }
}

TEST(PeerSumTest, ShapeMismatchThrows) {
  EXPECT_THROW(infer_peer_sum(2, Matrix(2, 2), Matrix(2, 3), Matrix(2, 2)), DimensionError);
}

// ---------------------------------------------------------------------------

TEST(EstimateTest, FullRankSketchRecoversDeltaExactly) {
  Rng rng(3);
  const Matrix w_old = random_matrix(3, 5, rng);
  const Matrix w_new = random_matrix(3, 5, rng);
  const auto s = identity_sketch(5);
  for (Method m : {Method::kOption1, Method::kOption2}) {
    const GradEstimate e =
        estimate_delta(sketch::apply(w_old, *s), *s, sketch::apply(w_new, *s), *s, m);
    EXPECT_LE(max_abs(e.delta_hat - (w_old - w_new)), 1e-15);
    EXPECT_EQ(e.method, m);
  }
}

TEST(EstimateTest, HandExampleTwoByOne) {
  const Matrix w_old{{1.0, 0.0}};
  const Matrix w_new(1, 2);
  const SketchMatrix s = two_by_one(1, 1);
  const GradEstimate e =
      estimate_delta(sketch::apply(w_old, s), s, sketch::apply(w_new, s), s, Method::kOption1);
  EXPECT_EQ(e.delta_hat, (Matrix{{1.0, 1.0}}));
}

TEST(EstimateTest, OptionOneUnbiasedByEnumeration) {
  Rng rng(4);
  for (auto [d, s] : {std::pair<std::size_t, std::size_t>{2, 1}, {3, 1}, {3, 2}}) {
    const Matrix w_old = random_int_matrix(2, d, 5, rng);
    const Matrix w_new = random_int_matrix(2, d, 5, rng);
    Matrix sum(2, d);
    std::size_t count = 0;
    for_each_countsketch(d, s, [&](const SketchMatrix& so) {
      for_each_countsketch(d, s, [&](const SketchMatrix& sn) {
        sum += estimate_delta(sketch::apply(w_old, so), so, sketch::apply(w_new, sn), sn,
                              Method::kOption1)
                   .delta_hat;
        ++count;
      });
    });
    sum *= 1.0 / static_cast<double>(count);
    EXPECT_LE(max_abs(sum - (w_old - w_new)), 1e-12) << "d=" << d << " s=" << s;
  }
}

TEST(EstimateTest, OptionOneMatchesDenseOracle) {
  Rng rng(5);
  const Matrix w_old = random_matrix(3, 9, rng);
  const Matrix w_new = random_matrix(3, 9, rng);
  const SketchMatrix so = sketch::generate({SketchDescriptor::countsketch(9, 4), 11});
  const SketchMatrix sn = sketch::generate({SketchDescriptor::countsketch(9, 3), 12});
  const Matrix expect = dense_project(w_old, so) - dense_project(w_new, sn);
  const GradEstimate e = estimate_delta(sketch::apply(w_old, so), so, sketch::apply(w_new, sn),
                                        sn, Method::kOption1);
  EXPECT_LE(max_abs(e.delta_hat - expect), 1e-12);
}

TEST(EstimateTest, OptionTwoUsesPseudoInverse) {
  const SketchMatrix s = SketchMatrix::from_hashing(2, {0, 0, 1}, {1, -1, 1});
  const Matrix c{{4.0, 2.0}};
  const GradEstimate e = estimate_delta(c, s, Matrix(1, 2), s, Method::kOption2);
  // Bucket sizes 2 and 1: c diag(1/2, 1) S^T.
  EXPECT_EQ(e.delta_hat, (Matrix{{2.0, -2.0, 2.0}}));
}

TEST(EstimateTest, ViewRegeneratesSketchesFromSeeds) {
  Rng rng(6);
  const Matrix w_old = random_matrix(2, 10, rng);
  const Matrix w_new = random_matrix(2, 10, rng);
  const SketchSpec so{SketchDescriptor::countsketch(10, 5), 21};
  const SketchSpec sn{SketchDescriptor::permuted(10, 3), 22};
  const SketchMatrix mo = sketch::generate(so);
  const SketchMatrix mn = sketch::generate(sn);
  const AttackView view{sketch::apply(w_old, mo), sketch::apply(w_new, mn), so, sn};
  const GradEstimate a = estimate_delta(view, Method::kOption1);
  const GradEstimate b =
      estimate_delta(view.w_sketched_old, mo, view.w_sketched_new, mn, Method::kOption1);
  EXPECT_EQ(a.delta_hat, b.delta_hat);
}

TEST(EstimateTest, InconsistentDescriptorIsProtocolError) {
  const SketchSpec so{SketchDescriptor::countsketch(10, 5), 1};
  const SketchSpec sn{SketchDescriptor::countsketch(10, 4), 2};
  EXPECT_THROW(estimate_delta(AttackView{Matrix(2, 5), Matrix(2, 5), so, sn}, Method::kOption1),
               ProtocolError);
  const SketchSpec other_d{SketchDescriptor::countsketch(12, 5), 2};
  EXPECT_THROW(
      estimate_delta(AttackView{Matrix(2, 5), Matrix(2, 5), so, other_d}, Method::kOption1),
      ProtocolError);
}

TEST(EstimateTest, OptionTwoRejectsUniformSampling) {
  const SketchMatrix u = SketchMatrix::from_sampling(4, {0, 2});
  EXPECT_THROW(estimate_delta(Matrix(1, 2), u, Matrix(1, 2), u, Method::kOption2),
               UnsupportedKindError);
}

TEST(EstimateTest, NaiveDifferenceIsFarFromDelta) {
  // Different sketches index unrelated coordinates; the raw difference of
  // sketched weights is not an estimate of anything.
  Rng rng(7);
  const Matrix w = random_matrix(4, 40, rng);
  const SketchMatrix so = sketch::generate({SketchDescriptor::countsketch(40, 20), 1});
  const SketchMatrix sn = sketch::generate({SketchDescriptor::countsketch(40, 20), 2});
  const Matrix naive = naive_difference(sketch::apply(w, so), sketch::apply(w, sn));
  EXPECT_GT(std::sqrt(frobenius_norm_sq(naive)), 1.0);
  EXPECT_THROW(naive_difference(Matrix(1, 2), Matrix(1, 3)), DimensionError);
}

// ---------------------------------------------------------------------------

TEST(MetricsTest, ExactEstimate) {
  const Matrix d{{1.0, -2.0}, {3.0, 0.5}};
  const AttackMetrics m = attack_metrics(d, d);
  EXPECT_DOUBLE_EQ(m.l2_rel, 0.0);
  EXPECT_DOUBLE_EQ(m.cosine, 1.0);
}

TEST(MetricsTest, NegatedEstimate) {
  const Matrix d{{1.0, -2.0}, {3.0, 0.5}};
  const AttackMetrics m = attack_metrics(-1.0 * d, d);
  EXPECT_DOUBLE_EQ(m.l2_rel, 2.0);
  EXPECT_DOUBLE_EQ(m.cosine, -1.0);
}

TEST(MetricsTest, HandExample) {
  const AttackMetrics m = attack_metrics(Matrix{{1.0, 1.0}}, Matrix{{1.0, 0.0}});
  EXPECT_NEAR(m.l2_rel, 1.0, 1e-15);
  EXPECT_NEAR(m.cosine, 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(MetricsTest, ZeroDenominatorsThrow) {
  EXPECT_THROW(attack_metrics(Matrix{{1.0}}, Matrix{{0.0}}), UndefinedMetricError);
  EXPECT_THROW(attack_metrics(Matrix{{0.0}}, Matrix{{1.0}}), UndefinedMetricError);
}

// ---------------------------------------------------------------------------

TEST(NoiseTest, ZeroNewWeightsHaveNoNoise) {
  Rng rng(8);
  const Matrix w_old = random_matrix(2, 6, rng);
  const SketchMatrix so = sketch::generate({SketchDescriptor::countsketch(6, 3), 1});
  const SketchMatrix sn = sketch::generate({SketchDescriptor::countsketch(6, 3), 2});
  const NoiseDecomposition nd = noise_decomposition(w_old, Matrix(2, 6), so, sn);
  EXPECT_EQ(max_abs(nd.noise), 0.0);
  EXPECT_LE(max_abs(nd.signal - dense_project(w_old, so)), 1e-12);
}

TEST(NoiseTest, SameSketchHasNoNoise) {
  Rng rng(9);
  const Matrix w_old = random_matrix(2, 6, rng);
  const Matrix w_new = random_matrix(2, 6, rng);
  const SketchMatrix s = sketch::generate({SketchDescriptor::countsketch(6, 3), 1});
  EXPECT_EQ(max_abs(noise_decomposition(w_old, w_new, s, s).noise), 0.0);
}

TEST(NoiseTest, SignalPlusNoiseIsOptionOne) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix w_old = random_matrix(3, 12, rng);
    const Matrix w_new = random_matrix(3, 12, rng);
    const SketchMatrix so = sketch::generate({SketchDescriptor::countsketch(12, 5), rng.next()});
    const SketchMatrix sn = sketch::generate({SketchDescriptor::countsketch(12, 4), rng.next()});
    const NoiseDecomposition nd = noise_decomposition(w_old, w_new, so, sn);
    const GradEstimate e = estimate_delta(sketch::apply(w_old, so), so, sketch::apply(w_new, sn),
                                          sn, Method::kOption1);
    EXPECT_LE(max_abs(nd.signal + nd.noise - e.delta_hat), 1e-12);
  }
}

TEST(NoiseTest, NoiseHasZeroMeanByEnumeration) {
  Rng rng(11);
  const Matrix w_old = random_int_matrix(2, 3, 4, rng);
  const Matrix w_new = random_int_matrix(2, 3, 4, rng);
  Matrix sum(2, 3);
  for_each_countsketch(3, 2, [&](const SketchMatrix& so) {
    for_each_countsketch(3, 2, [&](const SketchMatrix& sn) {
      sum += noise_decomposition(w_old, w_new, so, sn).noise;
    });
  });
  EXPECT_LE(max_abs(sum), 1e-12);
}

// ---------------------------------------------------------------------------

// Enumeration mean of ||(delta_hat - delta) V^T||^2 via dense products.
double enumerated_error(const Matrix& w_old, const Matrix& w_new, const Matrix& v,
                        std::size_t s) {
  const std::size_t d = w_old.cols();
  const Matrix delta_vt = naive_matmul(w_old - w_new, naive_transpose(v));
  double sum = 0.0;
  std::size_t count = 0;
  for_each_countsketch(d, s, [&](const SketchMatrix& so) {
    const Matrix po = dense_project(w_old, so);
    for_each_countsketch(d, s, [&](const SketchMatrix& sn) {
      const Matrix err = naive_matmul(po - dense_project(w_new, sn), naive_transpose(v)) - delta_vt;
      sum += frobenius_norm_sq(err);
      ++count;
    });
  });
  return sum / static_cast<double>(count);
}

TEST(TheoryTest, ExpectedErrorHandExamples) {
  EXPECT_DOUBLE_EQ(expected_error_exact(Matrix{{1.0, 0.0}}, Matrix(1, 2), Matrix{{0.0, 1.0}}, 1),
                   1.0);
  EXPECT_DOUBLE_EQ(expected_error_exact(Matrix{{1.0, 0.0}}, Matrix(1, 2), Matrix::identity(2), 1),
                   1.0);
  EXPECT_DOUBLE_EQ(expected_error_identity(Matrix{{1.0, 0.0}}, Matrix(1, 2), 1), 1.0);
  EXPECT_EQ(expected_error_exact(Matrix(2, 3), Matrix(2, 3), Matrix::identity(3), 2), 0.0);
  EXPECT_DOUBLE_EQ(enumerated_error(Matrix{{1.0, 0.0}}, Matrix(1, 2), Matrix{{0.0, 1.0}}, 1), 1.0);
}

TEST(TheoryTest, ExpectedErrorMatchesEnumeration) {
  Rng rng(12);
  for (auto [d, s] : {std::pair<std::size_t, std::size_t>{2, 1}, {3, 1}, {3, 2}}) {
    for (int trial = 0; trial < 5; ++trial) {
      const Matrix w_old = random_int_matrix(2, d, 4, rng);
      const Matrix w_new = random_int_matrix(2, d, 4, rng);
      const Matrix v = random_int_matrix(2, d, 4, rng);
      EXPECT_NEAR(expected_error_exact(w_old, w_new, v, s), enumerated_error(w_old, w_new, v, s),
                  1e-10)
          << "d=" << d << " s=" << s;
    }
  }
}

TEST(TheoryTest, IdentitySpecializationAgreesWithGeneralFormula) {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 4 + rng.below(12);
    const std::size_t s = 1 + rng.below(d - 1);
    const Matrix w_old = random_matrix(3, d, rng);
    const Matrix w_new = random_matrix(3, d, rng);
    EXPECT_NEAR(expected_error_exact(w_old, w_new, Matrix::identity(d), s),
                expected_error_identity(w_old, w_new, s), 1e-10);
  }
}

TEST(TheoryTest, ExpectedErrorRejectsBadShapes) {
  EXPECT_THROW(expected_error_exact(Matrix(1, 3), Matrix(1, 3), Matrix(2, 4), 1), DimensionError);
  EXPECT_THROW(expected_error_exact(Matrix(1, 3), Matrix(2, 3), Matrix(2, 3), 1), DimensionError);
}

TEST(MonteCarloTest, TwoByOneCaseWithinFourSigma) {
  const MonteCarloResult r =
      monte_carlo_error(Matrix{{1.0, 0.0}}, Matrix(1, 2), Matrix{{0.0, 1.0}}, 1, 10000, 5);
  // Every draw gives exactly 1, so the spread is zero.
  EXPECT_NEAR(r.mean, 1.0, 1e-12);
  EXPECT_LE(std::abs(r.mean - 1.0), 4.0 * r.stderr_ + 1e-12);
}

TEST(MonteCarloTest, ZeroWeightsGiveZero) {
  const MonteCarloResult r = monte_carlo_error_identity(Matrix(2, 5), Matrix(2, 5), 2, 100, 1);
  EXPECT_EQ(r.mean, 0.0);
  EXPECT_EQ(r.stderr_, 0.0);
}

TEST(MonteCarloTest, AgreesWithExactFormulaOnRandomV) {
  Rng rng(14);
  const Matrix w_old = random_matrix(3, 12, rng);
  const Matrix w_new = random_matrix(3, 12, rng);
  const Matrix v = random_matrix(4, 12, rng);
  const MonteCarloResult r = monte_carlo_error(w_old, w_new, v, 5, 20000, 3);
  EXPECT_LE(std::abs(r.mean - expected_error_exact(w_old, w_new, v, 5)), 4.0 * r.stderr_);
}

TEST(MonteCarloTest, ErrorGrowsWithInputDimension) {
  Rng rng(15);
  const Matrix a_old = random_matrix(4, 20, rng), a_new = random_matrix(4, 20, rng);
  const Matrix b_old = random_matrix(4, 40, rng), b_new = random_matrix(4, 40, rng);
  const MonteCarloResult ra = monte_carlo_error_identity(a_old, a_new, 10, 20000, 1);
  const MonteCarloResult rb = monte_carlo_error_identity(b_old, b_new, 10, 20000, 2);
  // Normalize out the weight norms so only the (d - 1)/s factor remains.
  const double na = frobenius_norm_sq(a_old) + frobenius_norm_sq(a_new);
  const double nb = frobenius_norm_sq(b_old) + frobenius_norm_sq(b_new);
  EXPECT_NEAR((rb.mean / nb) / (ra.mean / na), 39.0 / 19.0, 0.1);
}

TEST(MonteCarloTest, DeterministicAndThreadIndependent) {
  Rng rng(16);
  const Matrix w_old = random_matrix(2, 16, rng), w_new = random_matrix(2, 16, rng);
  const MonteCarloResult a = monte_carlo_error_identity(w_old, w_new, 4, 500, 9);
  setenv("DBCL_THREADS", "1", 1);
  const MonteCarloResult b = monte_carlo_error_identity(w_old, w_new, 4, 500, 9);
  unsetenv("DBCL_THREADS");
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.stderr_, b.stderr_);
}

TEST(MonteCarloTest, NeedsTwoTrials) {
  EXPECT_THROW(monte_carlo_error_identity(Matrix(1, 3), Matrix(1, 3), 1, 1, 0), InvalidSpecError);
}

// ---------------------------------------------------------------------------

TEST(ServerSideTest, FullRankSketchGivesTrueGradient) {
  Rng rng(17);
  const Matrix g = random_matrix(4, 3, rng);
  const Matrix x = random_matrix(4, 5, rng);
  const auto s = identity_sketch(5);
  const Matrix gamma = naive_matmul(naive_transpose(g), sketch::apply(x, *s));
  EXPECT_LE(max_abs(server_side_estimate(gamma, *s) - naive_matmul(naive_transpose(g), x)),
            1e-14);
}

TEST(ServerSideTest, ZeroGammaGivesZero) {
  const SketchMatrix s = sketch::generate({SketchDescriptor::countsketch(6, 2), 3});
  EXPECT_EQ(max_abs(server_side_estimate(Matrix(2, 2), s)), 0.0);
}

TEST(ServerSideTest, UnbiasedByEnumeration) {
  Rng rng(18);
  const Matrix g = random_int_matrix(3, 2, 3, rng);
  const Matrix x = random_int_matrix(3, 3, 3, rng);
  Matrix sum(2, 3);
  std::size_t count = 0;
  for_each_countsketch(3, 2, [&](const SketchMatrix& s) {
    const Matrix gamma = naive_matmul(naive_transpose(g), sketch::apply(x, s));
    sum += server_side_estimate(gamma, s);
    ++count;
  });
  sum *= 1.0 / static_cast<double>(count);
  EXPECT_LE(max_abs(sum - naive_matmul(naive_transpose(g), x)), 1e-12);
}

// ---------------------------------------------------------------------------

TEST(AucTest, OrderedReversedAndTied) {
  const std::vector<double> s = {0.1, 0.2, 0.3, 0.4};
  EXPECT_DOUBLE_EQ(auc(s, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(auc(s, std::vector<int>{1, 1, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>(4, 1.0), std::vector<int>{0, 1, 0, 1}), 0.5);
}

TEST(AucTest, MatchesPairCountingOracle) {
  Rng rng(19);
  std::vector<double> s(200);
  std::vector<int> y(200);
  for (std::size_t i = 0; i < s.size(); ++i) {
    y[i] = rng.uniform() < 0.3;
    s[i] = std::round(4.0 * rng.normal() + 2.0 * y[i]);  // rounding forces ties
  }
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  EXPECT_NEAR(auc(s, y), wins / pairs, 1e-12);
}

TEST(AucTest, SingleClassThrows) {
  EXPECT_THROW(auc(std::vector<double>{1.0, 2.0}, std::vector<int>{1, 1}), UndefinedMetricError);
  EXPECT_THROW(auc(std::vector<double>{1.0}, std::vector<int>{1, 0}), DimensionError);
}

// ---------------------------------------------------------------------------

std::vector<ObservedGradient> true_gradient(const nn::Model& model, std::span<const double> x,
                                            int label) {
  const Tensor4 input = Tensor4::from_matrix(Matrix(1, x.size(), {x.begin(), x.end()}));
  const int y[1] = {label};
  const nn::PassResult r =
      nn::train_pass(model.architecture(), nn::plain_parameters(model), input, y);
  std::vector<ObservedGradient> out;
  for (const auto& g : r.grads) out.push_back({g.gamma, g.grad_bias});
  return out;
}

std::vector<double> random_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& e : v) e = rng.normal();
  return v;
}

TEST(GradientMatchingTest, TrueInputIsAFixedPoint) {
  Rng rng(20);
  const std::size_t hidden[] = {8};
  const nn::Model model = nn::make_mlp(6, hidden, 3, false, rng);
  const std::vector<double> x0 = random_vector(6, rng);
  const auto obs = true_gradient(model, x0, 2);
  GradientMatchingConfig cfg;
  cfg.label = 2;
  cfg.restarts = 1;
  cfg.iterations = 5;
  cfg.init = x0;
  const GradientMatchingResult r = gradient_matching_attack(model, obs, cfg);
  EXPECT_EQ(r.trace.front(), 0.0);
  EXPECT_EQ(r.trace.size(), 6u);
  EXPECT_LE(reconstruction_mse(r.x_hat, x0), 1e-20);
}

TEST(GradientMatchingTest, SingleLayerSoftmaxRecoversDirection) {
  Rng rng(21);
  const nn::Model model = nn::make_mlp(8, {}, 4, false, rng);
  const std::vector<double> x0 = random_vector(8, rng);
  const auto obs = true_gradient(model, x0, 1);
  GradientMatchingConfig cfg;
  cfg.label = 1;
  cfg.restarts = 2;
  cfg.iterations = 1500;
  cfg.seed = 3;
  const GradientMatchingResult r = gradient_matching_attack(model, obs, cfg);
  // The weight gradient (p - y) x^T is rank one with x as its row space.
  auto unit = [](std::vector<double> v) {
    double n = 0.0;
    for (double e : v) n += e * e;
    for (double& e : v) e /= std::sqrt(n);
    return v;
  };
  EXPECT_LE(reconstruction_mse(unit(r.x_hat), unit(x0)), 1e-4);
  EXPECT_LT(r.trace.back(), r.trace.front());
}

TEST(GradientMatchingTest, NonFiniteObservationDiverges) {
  Rng rng(22);
  const nn::Model model = nn::make_mlp(4, {}, 2, false, rng);
  auto obs = true_gradient(model, random_vector(4, rng), 0);
  obs[0].weight(0, 0) = std::numeric_limits<double>::infinity();
  GradientMatchingConfig cfg;
  cfg.iterations = 2;
  EXPECT_THROW(gradient_matching_attack(model, obs, cfg), DivergedAttackError);
}

TEST(GradientMatchingTest, ShapeMismatchThrows) {
  Rng rng(23);
  const nn::Model model = nn::make_mlp(4, {}, 2, false, rng);
  std::vector<ObservedGradient> obs = {{Matrix(2, 5), {0.0, 0.0}}};
  EXPECT_THROW(gradient_matching_attack(model, obs, {}), DimensionError);
}

// ---------------------------------------------------------------------------

struct Gaussians {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
};

Gaussians two_gaussians(std::size_t n, std::size_t d, double sep, Rng& rng) {
  Gaussians g;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    std::vector<double> row = random_vector(d, rng);
    for (double& e : row) e += y ? sep : -sep;
    g.x.push_back(std::move(row));
    g.y.push_back(y);
  }
  return g;
}

std::vector<LabeledGradient> as_labeled(const Gaussians& g) {
  std::vector<LabeledGradient> out;
  for (std::size_t i = 0; i < g.x.size(); ++i) out.push_back({g.x[i], g.y[i]});
  return out;
}

TEST(PropertyInferenceTest, SeparableTrainingSetScoresItselfPerfectly) {
  Rng rng(24);
  const auto data = as_labeled(two_gaussians(400, 20, 1.0, rng));
  EXPECT_GE(property_inference_attack(data, data, {}), 0.99);
}

TEST(PropertyInferenceTest, ShuffledLabelsGiveChance) {
  Rng rng(25);
  Gaussians train = two_gaussians(2000, 20, 1.0, rng);
  for (std::size_t i = train.y.size() - 1; i > 0; --i) {
    std::swap(train.y[i], train.y[rng.below(i + 1)]);
  }
  const auto test = as_labeled(two_gaussians(4000, 20, 1.0, rng));
  EXPECT_NEAR(property_inference_attack(test, as_labeled(train), {}), 0.5, 0.05);
}

TEST(PropertyInferenceTest, LogisticFitMatchesNewtonSolution) {
  // One feature, no penalty worth mentioning: the fitted slope must zero the
  // score equation sum (sigmoid(w z + b) - y) z = 0.
  Rng rng(26);
  Gaussians g = two_gaussians(300, 1, 0.5, rng);
  LogisticConfig cfg;
  cfg.l2 = 1e-9;
  cfg.iterations = 5000;
  const LogisticModel lm = LogisticModel::fit(g.x, g.y, cfg);
  double score_w = 0.0, score_b = 0.0;
  for (std::size_t i = 0; i < g.x.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-lm.decision(g.x[i])));
    score_w += (p - g.y[i]) * g.x[i][0];
    score_b += p - g.y[i];
  }
  EXPECT_NEAR(score_w / 300.0, 0.0, 1e-6);
  EXPECT_NEAR(score_b / 300.0, 0.0, 1e-6);
}

TEST(PropertyInferenceTest, NoPropertySignalGivesChanceEvenUndefended) {
  PiaConfig cfg;
  cfg.delta = 0.0;
  cfg.rounds = 150;
  cfg.victim_property_rate = 0.5;
  cfg.seed = 3;
  const PiaResult r = run_property_inference(cfg);
  EXPECT_NEAR(r.auc_undefended, 0.5, 0.1);
}

TEST(PropertyInferenceTest, SingleClassStreamThrows) {
  Rng rng(27);
  const auto train = as_labeled(two_gaussians(50, 3, 1.0, rng));
  std::vector<LabeledGradient> stream = {{{0.0, 0.0, 0.0}, 1}, {{1.0, 1.0, 1.0}, 1}};
  EXPECT_THROW(property_inference_attack(stream, train, {}), UndefinedMetricError);
}

// ---------------------------------------------------------------------------

TEST(TrackerTest, RecordsBothOptionsForSketchedLayersOnly) {
  data::BlobsOptions bo;
  bo.classes = 3;
  const data::Dataset ds = data::synth_blobs(120, 12, 1, bo);
  Rng rng(28);
  const std::size_t hidden[] = {10};
  const nn::Model model = nn::make_mlp(12, hidden, 3, false, rng);
  fed::TrainConfig cfg;
  cfg.clients = 3;
  cfg.rounds = 4;
  cfg.lr = 0.1;
  cfg.batch = 8;
  EstimateTracker tracker;
  fed::RoundHooks hooks;
  hooks.on_broadcast = [&](const fed::RoundMsgDown& m, const nn::Model& w) {
    tracker.observe(m, w);
  };
  fed::run_training(model, cfg, ds, ds, hooks);
  // Rounds 1..3 are observable (the last update is never re-broadcast); only
  // the hidden layer is sketched.
  ASSERT_EQ(tracker.records().size(), 6u);
  for (const auto& r : tracker.records()) {
    EXPECT_EQ(r.layer, 0u);
    EXPECT_GE(r.round, 1u);
    EXPECT_LE(r.round, 3u);
    EXPECT_GE(r.l2_rel, 0.0);
    EXPECT_LE(std::abs(r.cosine), 1.0);
  }
  EXPECT_EQ(per_round_median(tracker.records(), Method::kOption1, false).size(), 3u);
}

TEST(TrackerTest, MedianOverLayers) {
  const std::vector<EstimateRecord> recs = {{1, 0, Method::kOption1, 3.0, 0.1},
                                            {1, 1, Method::kOption1, 1.0, 0.3},
                                            {2, 0, Method::kOption1, 5.0, 0.2},
                                            {2, 1, Method::kOption1, 2.0, 0.0},
                                            {2, 2, Method::kOption1, 4.0, 0.0},
                                            {2, 2, Method::kOption2, 9.0, 0.0}};
  EXPECT_EQ(per_round_median(recs, Method::kOption1, false), (std::vector<double>{2.0, 4.0}));
  EXPECT_EQ(per_round_median(recs, Method::kOption1, true), (std::vector<double>{0.2, 0.0}));
}

TEST(ReportTest, JsonLinesFieldOrder) {
  std::ostringstream out;
  write_estimate_jsonl(out, {3, 1, Method::kOption2, 0.5, -0.25});
  write_summary_jsonl(out, "auc", 0.75);
  EXPECT_EQ(out.str(),
            "{\"round\":3,\"layer\":1,\"method\":\"option2\",\"l2_rel\":0.5,\"cosine\":-0.25}\n"
            "{\"summary\":\"auc\",\"value\":0.75}\n");
}

}  // namespace
}  // namespace dbcl::attack
