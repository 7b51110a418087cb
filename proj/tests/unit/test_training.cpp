#include <gtest/gtest.h>

#include <random>

#include "kcl/control.hpp"
#include "kcl/training.hpp"
#include "support.hpp"

using namespace kcl;

namespace {

const IntegrationConfig kCfg{0.1, 10};

TrajectoryDataset pendulum_data(int count, int steps, std::uint64_t seed) {
  const auto sys = systems::pendulum();
  const auto raw = collect_trajectories(sys, BoxSampler{Box::uniform(2, -2, 2), seed}, InputSignal::zero(), steps,
                                        kCfg, count);
  return split_into_groups(raw, sys, kCfg, 3, {0, 20, 40});
}

KoopmanModel random_network_model(std::mt19937_64& rng, int n, int hidden, int N, std::uint64_t seed) {
  auto obs = ObservableMap::network(n, {hidden}, N, seed);
  auto& net = obs.net();
  for (auto& layer : net.layers) layer.bias = test::random_vector(rng, layer.bias.size(), 0.3);
  const int d = n + N;
  return make_model(test::random_matrix(rng, d, d, 0.3), test::random_matrix(rng, d, 1, 0.3), obs, "test");
}

/// Naive loss evaluated column by column in long double.
long double naive_loss(const KoopmanModel& m, const Matrix& X, const Matrix& U, const Matrix& Y, double l1,
                       double l2) {
  long double total = 0;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const Vector pred = m.A * m.lift(Vector(X.col(j))) + m.B * U.col(j);
    const Vector gy = m.lift(Vector(Y.col(j)));
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
      const long double e = static_cast<long double>(pred[i]) - gy[i];
      total += l1 * e * e;
    }
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
      const long double e = static_cast<long double>(pred[i]) - Y(i, j);
      total += l2 * e * e;
    }
  }
  return total;
}

}  // namespace

TEST(Loss, MatchesNaiveEvaluation) {
  std::mt19937_64 rng(1);
  const auto model = random_network_model(rng, 2, 5, 2, 3);
  const auto data = pendulum_data(4, 5, 2);
  const auto v = evaluate_loss(model, data, 0.7, 1.3);
  EXPECT_NEAR(v.J, static_cast<double>(naive_loss(model, data.X(), data.U(), data.Y(), 0.7, 1.3)), 1e-10 * v.J);
  EXPECT_NEAR(v.J, v.term1 + v.term2, 1e-12 * v.J);
}

TEST(Loss, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(2);
  const auto data = pendulum_data(3, 4, 5);
  const Matrix X = data.X(), U = data.U(), Y = data.Y();
  for (int trial = 0; trial < 3; ++trial) {
    const auto model = random_network_model(rng, 2, 4, 2, trial);
    const auto [value, grad] = loss_and_gradient(model, X, U, Y, 1.0, 1.0);
    const double h = 1e-5;
    auto check = [&](auto&& perturb, double analytic) {
      KoopmanModel plus = model, minus = model;
      perturb(plus, h);
      perturb(minus, -h);
      const long double fd = (naive_loss(plus, X, U, Y, 1, 1) - naive_loss(minus, X, U, Y, 1, 1)) / (2 * h);
      EXPECT_NEAR(analytic, static_cast<double>(fd), 1e-6 * std::max(1.0, std::abs(analytic)));
    };
    for (Eigen::Index i = 0; i < model.A.size(); ++i) {
      check([i](KoopmanModel& m, double d) { m.A.data()[i] += d; }, grad.A.data()[i]);
    }
    for (Eigen::Index i = 0; i < model.B.size(); ++i) {
      check([i](KoopmanModel& m, double d) { m.B.data()[i] += d; }, grad.B.data()[i]);
    }
    for (std::size_t l = 0; l < 2; ++l) {
      for (Eigen::Index i = 0; i < model.observables.net().layers[l].kernel.size(); ++i) {
        check([l, i](KoopmanModel& m, double d) { m.observables.net().layers[l].kernel.data()[i] += d; },
              grad.weights.kernels[l].data()[i]);
      }
      for (Eigen::Index i = 0; i < model.observables.net().layers[l].bias.size(); ++i) {
        check([l, i](KoopmanModel& m, double d) { m.observables.net().layers[l].bias[i] += d; },
              grad.weights.biases[l][i]);
      }
    }
  }
}

TEST(Loss, FixedDictionaryHasNoWeightGradient) {
  const auto data = sample_pairs(systems::motivating(), Box::uniform(1, -4, 4), Box::uniform(1, -2, 2), 50, 1);
  const auto model = fit_model(data, ObservableMap::fixed_dictionary("model1"));
  const auto [value, grad] = loss_initial(model, data, 1.0, 1.0);
  EXPECT_TRUE(grad.weights.kernels.empty());
  EXPECT_EQ(grad.A.rows(), 2);
}

TEST(Train, ReducesLossAndKeepsBestCheckpoint) {
  const auto data = pendulum_data(10, 20, 3);
  TrainingConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 64;
  cfg.learning_rate = 1e-2;
  cfg.seed = 5;
  const auto result = train_initial(data, Architecture{{8}, 1}, cfg);
  EXPECT_EQ(result.curve.size(), 41u);
  EXPECT_LT(result.final_loss.J, 0.2 * result.initial_loss.J);
  double best = result.curve.front().loss.J;
  for (const auto& r : result.curve) best = std::min(best, r.loss.J);
  EXPECT_EQ(result.final_loss.J, best);
  EXPECT_DOUBLE_EQ(evaluate_loss(result.model, data, 1, 1).J, best);
  EXPECT_EQ(result.model.provenance.source, "step1");
}

TEST(Train, IsDeterministicForAFixedSeed) {
  const auto data = pendulum_data(6, 10, 4);
  TrainingConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  cfg.seed = 9;
  const auto a = train_initial(data, Architecture{}, cfg);
  const auto b = train_initial(data, Architecture{}, cfg);
  EXPECT_EQ(a.model.A, b.model.A);
  EXPECT_EQ(a.model.observables.net().layers[0].kernel, b.model.observables.net().layers[0].kernel);
  cfg.seed = 10;
  const auto c = train_initial(data, Architecture{}, cfg);
  EXPECT_NE(a.model.A, c.model.A);
}

TEST(Train, LeastSquaresPolishNeverIncreasesLoss) {
  const auto data = pendulum_data(6, 10, 4);
  TrainingConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  const auto plain = train_initial(data, Architecture{}, cfg);
  cfg.least_squares_polish = true;
  const auto polished = train_initial(data, Architecture{}, cfg);
  EXPECT_LE(polished.final_loss.J, plain.final_loss.J);
}

TEST(Train, RejectsBadInputs) {
  const auto data = pendulum_data(2, 3, 4);
  TrainingConfig cfg;
  cfg.batch_size = 1000;
  EXPECT_THROW(train_initial(data, Architecture{}, cfg), InvalidInput);
  cfg.batch_size = 2;
  EXPECT_THROW(train_initial(TrajectoryDataset(2, 1), Architecture{}, cfg), EmptyDatasetError);
  cfg.learning_rate = 0;
  EXPECT_THROW(train_initial(data, Architecture{}, cfg), InvalidInput);
}

TEST(Projection, ClipsSingularValues) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix M = test::random_matrix(rng, 4, 3);
    const Matrix P = project_spectral_ball(M, 0.5);
    EXPECT_LE(spectral_norm(P), 0.5 + 1e-12);
    EXPECT_TRUE(project_spectral_ball(P, 0.5).isApprox(P, 1e-12));
    // Optimality against random feasible points.
    for (int k = 0; k < 20; ++k) {
      Matrix Q = test::random_matrix(rng, 4, 3);
      Q *= 0.5 * std::uniform_real_distribution<double>(0, 1)(rng) / spectral_norm(Q);
      EXPECT_LE((M - P).norm(), (M - Q).norm() + 1e-12);
    }
  }
  const Matrix small = 0.01 * Matrix::Identity(3, 3);
  EXPECT_EQ(project_spectral_ball(small, 0.1), small);
  EXPECT_TRUE(project_spectral_ball(small, 0.0).isZero());
  EXPECT_THROW(project_spectral_ball(small, -1.0), InvalidInput);
}

TEST(Refine, RespectsBudgetsAndFreezesObservables) {
  const auto data = pendulum_data(10, 20, 6);
  TrainingConfig tcfg;
  tcfg.epochs = 20;
  tcfg.batch_size = 64;
  tcfg.learning_rate = 1e-2;
  const auto initial = train_initial(data, Architecture{{6}, 1}, tcfg).model;
  const auto gain = lqr_gain(initial, LQRWeights::on_states(Vector::Ones(2), 1, Matrix::Identity(1, 1)));
  const auto closed = collect_closed_loop(systems::pendulum(), initial, gain, BoxSampler{Box::uniform(2, -2, 2), 3},
                                          20, kCfg, 10, 20.0);
  const auto augmented = merge(data, closed);
  RefinementConfig rcfg;
  rcfg.max_iterations = 2000;
  const auto result = refine(initial, augmented, rcfg, tcfg);
  EXPECT_LE(spectral_norm(result.delta_A), 0.1 + 1e-9);
  EXPECT_LE(spectral_norm(result.delta_B), 0.1 + 1e-9);
  EXPECT_LE(result.final_loss.J, result.initial_loss.J);
  EXPECT_TRUE(result.warnings.empty());
  EXPECT_EQ(result.model.observables.net().layers[0].kernel, initial.observables.net().layers[0].kernel);
  EXPECT_EQ(result.model.observables.net().layers[1].bias, initial.observables.net().layers[1].bias);
  ASSERT_TRUE(result.model.refinement.has_value());
  EXPECT_EQ(result.model.refinement->A_initial, initial.A);
  EXPECT_TRUE(result.model.A.isApprox(initial.A + result.delta_A));
  for (std::size_t k = 1; k < result.curve.size(); ++k) {
    EXPECT_LE(result.curve[k].loss.J, result.curve[k - 1].loss.J);
  }
}

TEST(Refine, ZeroBudgetKeepsMatrices) {
  const auto data = pendulum_data(4, 10, 7);
  const auto model = fit_model(data, ObservableMap::fixed_dictionary("identity", 2));
  RefinementConfig rcfg;
  rcfg.eps_A = rcfg.eps_B = 0.0;
  rcfg.max_iterations = 50;
  const auto result = refine(model, data, rcfg, TrainingConfig{});
  EXPECT_TRUE(result.delta_A.isZero());
  EXPECT_EQ(result.model.A, model.A);
  EXPECT_FALSE(result.warnings.empty());  // no feedback data
}

TEST(Refine, LargeBudgetReachesTheUnconstrainedMinimum) {
  const auto data = pendulum_data(6, 10, 8);
  std::mt19937_64 rng(3);
  const auto model = random_network_model(rng, 2, 5, 2, 1);
  TrainingConfig tcfg;
  tcfg.lambda1 = 1.0;
  tcfg.lambda2 = 2.0;
  RefinementConfig rcfg;
  rcfg.eps_A = rcfg.eps_B = 1e6;
  rcfg.max_iterations = 200000;
  const auto result = refine(model, data, rcfg, tcfg);
  KoopmanModel oracle = model;
  solve_linear_part(oracle, lift_dataset(data, model.observables), tcfg.lambda1, tcfg.lambda2);
  const double optimum = evaluate_loss(oracle, data, 1.0, 2.0).J;
  EXPECT_NEAR(result.final_loss.J, optimum, 1e-6 * optimum);
}
