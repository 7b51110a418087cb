#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "kcl/edmd.hpp"
#include "kcl/model.hpp"
#include "kcl/sampling.hpp"

namespace kcl {

struct TrainingConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double learning_rate = 1e-3;
  int epochs = 500;
  int batch_size = 256;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Optional: start A, B from the least-squares solution for the initial features.
  bool least_squares_init = false;
  // Optional: after the last epoch, re-solve A, B in closed form with the weights frozen.
  bool least_squares_polish = false;

  void validate() const {
    require(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda1 + lambda2 > 0.0,
            "TrainingConfig: need lambda1, lambda2 >= 0 with a positive sum");
    require(learning_rate > 0.0, "TrainingConfig: learning rate must be positive");
    require(epochs >= 0, "TrainingConfig: epochs must be >= 0");
    require(batch_size >= 1, "TrainingConfig: batch size must be >= 1");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0,
            "TrainingConfig: invalid moment parameters");
  }
};

/// Network shape for the learned features.
struct Architecture {
  std::vector<int> hidden{10};
  int N = 1;
  Activation activation = Activation::Swish;
  bool final_activation = true;
};

struct LossValue {
  double J = 0.0;
  double term1 = 0.0;  // lambda1 |A G_x + B U - G_y|_F^2
  double term2 = 0.0;  // lambda2 |W (A G_x + B U) - Y|_F^2
};

struct LossGradient {
  Matrix A;
  Matrix B;
  NetGradient weights;  // empty for fixed dictionaries
};

struct LossRecord {
  int epoch = 0;
  LossValue loss;
};

/// Thrown when training produces a non-finite loss; carries the last finite model.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, KoopmanModel checkpoint)
      : NumericError(what), checkpoint_(std::move(checkpoint)) {}
  const KoopmanModel& checkpoint() const { return checkpoint_; }

 private:
  KoopmanModel checkpoint_;
};

namespace detail {

/// Residual blocks shared by loss and gradient: E1 = A Gx + B U - Gy and
/// E2 = W (A Gx + B U) - Y.
struct Residuals {
  Matrix E1;
  Matrix E2;
};

inline Residuals residuals(const Matrix& A, const Matrix& B, const Matrix& Gx, const Matrix& U,
                           const Matrix& Gy, const Matrix& Y) {
  const Matrix pred = A * Gx + B * U;
  return Residuals{pred - Gy, pred.topRows(Y.rows()) - Y};
}

inline LossValue loss_value(const Residuals& r, double lambda1, double lambda2) {
  LossValue v;
  v.term1 = lambda1 * r.E1.squaredNorm();
  v.term2 = lambda2 * r.E2.squaredNorm();
  v.J = v.term1 + v.term2;
  return v;
}

}  // namespace detail

/// Loss on columns of X, U, Y; the lifted matrices are recomputed with the current weights.
inline LossValue evaluate_loss(const KoopmanModel& model, const Matrix& X, const Matrix& U, const Matrix& Y,
                               double lambda1, double lambda2) {
  require(X.cols() >= 1, "loss: empty batch");
  const Matrix Gx = model.observables.lift_batch(X);
  const Matrix Gy = model.observables.lift_batch(Y);
  return detail::loss_value(detail::residuals(model.A, model.B, Gx, U, Gy, Y), lambda1, lambda2);
}

inline LossValue evaluate_loss(const KoopmanModel& model, const TrajectoryDataset& data, double lambda1,
                               double lambda2) {
  require(!data.empty(), "loss: dataset is empty");
  return evaluate_loss(model, data.X(), data.U(), data.Y(), lambda1, lambda2);
}

/// J = lambda1 |A G_x + B U - G_y|^2 + lambda2 |W(A G_x + B U) - Y|^2 and its exact
/// gradients w.r.t. A, B and the network weights (both G_x and G_y depend on them).
inline std::pair<LossValue, LossGradient> loss_and_gradient(const KoopmanModel& model, const Matrix& X,
                                                            const Matrix& U, const Matrix& Y,
                                                            double lambda1, double lambda2) {
  require(X.cols() >= 1, "loss: empty batch");
  const auto& obs = model.observables;
  const Eigen::Index n = obs.n();
  const Eigen::Index N = obs.N();

  Matrix Gx(obs.lifted_dim(), X.cols());
  Matrix Gy(obs.lifted_dim(), Y.cols());
  Gx.topRows(n) = obs.scale() * X;
  Gy.topRows(n) = obs.scale() * Y;
  ForwardCache cache_x, cache_y;
  const bool network = obs.is_network() && N > 0;
  if (network) {
    cache_x = obs.forward_cached(X);
    cache_y = obs.forward_cached(Y);
    Gx.bottomRows(N) = cache_x.output;
    Gy.bottomRows(N) = cache_y.output;
  } else if (N > 0) {
    Gx.bottomRows(N) = obs.forward_batch(X);
    Gy.bottomRows(N) = obs.forward_batch(Y);
  }

  const auto r = detail::residuals(model.A, model.B, Gx, U, Gy, Y);
  const LossValue value = detail::loss_value(r, lambda1, lambda2);

  Matrix dpred = 2.0 * lambda1 * r.E1;
  dpred.topRows(n) += 2.0 * lambda2 * r.E2;

  LossGradient grad;
  grad.A = dpred * Gx.transpose();
  grad.B = dpred * U.transpose();
  if (network) {
    const Matrix dGx = model.A.transpose() * dpred;
    const Matrix dGy = -2.0 * lambda1 * r.E1;
    grad.weights = obs.backward_batch(cache_x, dGx.bottomRows(N));
    grad.weights += obs.backward_batch(cache_y, dGy.bottomRows(N));
  }
  return {value, grad};
}

inline std::pair<LossValue, LossGradient> loss_initial(const KoopmanModel& model, const TrajectoryDataset& data,
                                                       double lambda1, double lambda2) {
  require(!data.empty(), "loss_initial: dataset is empty");
  return loss_and_gradient(model, data.X(), data.U(), data.Y(), lambda1, lambda2);
}

/// Closed-form minimizer of J over [A B] with the observables frozen. Rows of the
/// state block see both loss terms; the feature rows only the first one.
inline void solve_linear_part(KoopmanModel& model, const LiftedData& lifted, double lambda1, double lambda2) {
  const Eigen::Index n = model.n();
  const Eigen::Index d = model.lifted_dim();
  const Matrix Z = lifted.regressor();
  Eigen::BDCSVD<Matrix> svd(Z.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  Matrix target = lifted.Gy;
  target.topRows(n) = (lambda1 * lifted.Gy.topRows(n) + lambda2 * lifted.Y) / (lambda1 + lambda2);
  const Matrix AB = svd.solve(target.transpose()).transpose();
  const Eigen::Index rows = lambda1 > 0.0 ? d : n;
  model.A.topRows(rows) = AB.topLeftCorner(rows, d);
  model.B.topRows(rows) = AB.topRightCorner(rows, model.p());
}

/// Adam over a flat list of parameter blocks.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < params[i].size(); ++j) {
        const double g = grads[i][j];
        m[j] = b1_ * m[j] + (1.0 - b1_) * g;
        v[j] = b2_ * v[j] + (1.0 - b2_) * g * g;
        params[i][j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

namespace detail {

template <class Derived>
std::span<double> as_span(Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

template <class Derived>
std::span<const double> as_span(const Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

}  // namespace detail

struct TrainingResult {
  KoopmanModel model;
  std::vector<LossRecord> curve;  // epoch 0 is the initialized model
  LossValue initial_loss;
  LossValue final_loss;
};

/// Fresh model: network observables plus least-squares (or identity/zero) A, B.
inline KoopmanModel initialize_model(const TrajectoryDataset& data, const Architecture& arch,
                                     const TrainingConfig& cfg) {
  ObservableMap obs = ObservableMap::network(data.n(), arch.hidden, arch.N, cfg.seed, arch.activation,
                                             arch.final_activation);
  const Eigen::Index d = obs.lifted_dim();
  KoopmanModel model = make_model(Matrix::Identity(d, d), Matrix::Zero(d, data.p()), std::move(obs), "step1");
  if (cfg.least_squares_init) solve_linear_part(model, lift_dataset(data, model.observables), cfg.lambda1, cfg.lambda2);
  return model;
}

/// Joint learning of the network weights and A, B by minibatch Adam on J.
/// Returns the parameters with the lowest full-data loss seen.
inline TrainingResult train_initial(const TrajectoryDataset& data, const Architecture& arch,
                                    const TrainingConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw EmptyDatasetError("train_initial: dataset is empty");
  require(static_cast<std::size_t>(cfg.batch_size) <= data.size() || cfg.epochs == 0,
          "train_initial: batch size exceeds the number of triplets");

  const Matrix X = data.X();
  const Matrix U = data.U();
  const Matrix Y = data.Y();

  TrainingResult result{initialize_model(data, arch, cfg), {}, {}, {}};
  KoopmanModel& model = result.model;
  result.initial_loss = evaluate_loss(model, X, U, Y, cfg.lambda1, cfg.lambda2);
  if (!std::isfinite(result.initial_loss.J)) {
    throw TrainingDiverged("train_initial: initial loss is not finite", model);
  }
  result.curve.push_back({0, result.initial_loss});

  KoopmanModel best = model;
  LossValue best_loss = result.initial_loss;

  Adam adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x5eed));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(X.cols()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto M = static_cast<std::size_t>(X.cols());
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0, b = 0; start < M; start += batch, ++b) {
      const std::size_t stop = std::min(M, start + batch);
      const auto cols = static_cast<Eigen::Index>(stop - start);
      Matrix bx(X.rows(), cols), bu(U.rows(), cols), by(Y.rows(), cols);
      for (Eigen::Index j = 0; j < cols; ++j) {
        const Eigen::Index src = order[start + static_cast<std::size_t>(j)];
        bx.col(j) = X.col(src);
        bu.col(j) = U.col(src);
        by.col(j) = Y.col(src);
      }
      auto [value, grad] = loss_and_gradient(model, bx, bu, by, cfg.lambda1, cfg.lambda2);
      if (!std::isfinite(value.J) || !grad.A.allFinite() || !grad.B.allFinite()) {
        throw TrainingDiverged("train_initial: non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(b),
                               best);
      }
      std::vector<std::span<double>> params{detail::as_span(model.A), detail::as_span(model.B)};
      std::vector<std::span<const double>> grads{detail::as_span(grad.A), detail::as_span(grad.B)};
      if (model.observables.is_network()) {
        auto& layers = model.observables.net().layers;
        for (std::size_t l = 0; l < layers.size(); ++l) {
          params.push_back(detail::as_span(layers[l].kernel));
          params.push_back(detail::as_span(layers[l].bias));
          grads.push_back(detail::as_span(grad.weights.kernels[l]));
          grads.push_back(detail::as_span(grad.weights.biases[l]));
        }
      }
      adam.step(params, grads);
    }
    const LossValue full = evaluate_loss(model, X, U, Y, cfg.lambda1, cfg.lambda2);
    if (!std::isfinite(full.J)) {
      throw TrainingDiverged("train_initial: non-finite loss after epoch " + std::to_string(epoch), best);
    }
    result.curve.push_back({epoch, full});
    if (full.J < best_loss.J) {
      best = model;
      best_loss = full;
    }
  }

  if (cfg.least_squares_polish && cfg.epochs > 0) {
    KoopmanModel polished = best;
    solve_linear_part(polished, lift_dataset(data, polished.observables), cfg.lambda1, cfg.lambda2);
    const LossValue polished_loss = evaluate_loss(polished, X, U, Y, cfg.lambda1, cfg.lambda2);
    if (std::isfinite(polished_loss.J) && polished_loss.J < best_loss.J) {
      best = std::move(polished);
      best_loss = polished_loss;
      result.curve.push_back({cfg.epochs + 1, best_loss});
    }
  }

  result.model = std::move(best);
  result.final_loss = best_loss;
  return result;
}

/// Largest singular value.
inline double spectral_norm(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(M);
  return svd.singularValues()[0];
}

/// Euclidean (Frobenius) projection onto {D : |D|_2 <= eps}: singular values clipped at eps.
inline Matrix project_spectral_ball(const Matrix& M, double eps) {
  require(eps >= 0.0, "project_spectral_ball: eps must be >= 0");
  if (M.size() == 0) return M;
  Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  if (s[0] <= eps) return M;
  const Vector clipped = s.cwiseMin(eps);
  return svd.matrixU() * clipped.asDiagonal() * svd.matrixV().transpose();
}

struct RefinementConfig {
  double eps_A = 0.1;
  double eps_B = 0.1;
  int max_iterations = 20000;
  double tolerance = 1e-12;     // relative step size that ends the iteration
  double closed_loop_fraction = 0.5;  // share of closed-loop triplets in the augmented set

  void validate() const {
    require(eps_A >= 0.0 && eps_B >= 0.0, "RefinementConfig: budgets must be >= 0");
    require(max_iterations >= 0, "RefinementConfig: max_iterations must be >= 0");
    require(closed_loop_fraction > 0.0 && closed_loop_fraction <= 1.0,
            "RefinementConfig: closed_loop_fraction must lie in (0, 1]");
  }
};

struct RefinementResult {
  KoopmanModel model;
  Matrix delta_A;
  Matrix delta_B;
  LossValue initial_loss;  // J_c(0, 0)
  LossValue final_loss;    // J_c(delta_A, delta_B)
  std::vector<LossRecord> curve;
  int iterations = 0;
  std::vector<std::string> warnings;
};

/// Minimizes J_c(dA, dB) = J(A + dA, B + dB) with the observables frozen, subject to
/// |dA|_2 <= eps_A and |dB|_2 <= eps_B. Monotone accelerated projected gradient
/// (objective never increases between accepted iterates).
inline RefinementResult refine(const KoopmanModel& model, const TrajectoryDataset& data,
                               const RefinementConfig& cfg, const TrainingConfig& opt) {
  cfg.validate();
  opt.validate();
  model.validate();
  if (data.empty()) throw EmptyDatasetError("refine: dataset is empty");

  RefinementResult result{model, {}, {}, {}, {}, {}, 0, {}};
  if (data.count_with(SignalKind::Feedback) == 0) {
    result.warnings.emplace_back("refine: dataset contains no closed-loop (feedback) triplets");
  }

  const double l1 = opt.lambda1;
  const double l2 = opt.lambda2;
  const Eigen::Index n = model.n();
  const Eigen::Index d = model.lifted_dim();
  const Eigen::Index p = model.p();
  const LiftedData lifted = lift_dataset(data, model.observables);
  const Matrix Z = lifted.regressor();
  const Matrix pred0 = model.A * lifted.Gx + model.B * lifted.U;
  const Matrix E0 = pred0 - lifted.Gy;
  const Matrix F0 = pred0.topRows(n) - lifted.Y;

  // Quadratic model of J_c in D = [dA dB] through Gram matrices.
  const Matrix C = Z * Z.transpose();
  const Matrix E0Zt = E0 * Z.transpose();
  const Matrix F0Zt = F0 * Z.transpose();
  const double e0 = E0.squaredNorm();
  const double f0 = F0.squaredNorm();
  auto objective = [&](const Matrix& D) {
    const Matrix DC = D * C;
    LossValue v;
    v.term1 = l1 * (e0 + 2.0 * (D.cwiseProduct(E0Zt)).sum() + (DC.cwiseProduct(D)).sum());
    v.term2 = l2 * (f0 + 2.0 * (D.topRows(n).cwiseProduct(F0Zt)).sum() +
                    (DC.topRows(n).cwiseProduct(D.topRows(n))).sum());
    v.J = v.term1 + v.term2;
    return v;
  };
  auto gradient = [&](const Matrix& D) {
    Matrix G = 2.0 * l1 * (E0Zt + D * C);
    G.topRows(n) += 2.0 * l2 * (F0Zt + D.topRows(n) * C);
    return G;
  };
  auto project = [&](const Matrix& D) {
    Matrix P(d, d + p);
    P.leftCols(d) = project_spectral_ball(D.leftCols(d), cfg.eps_A);
    P.rightCols(p) = project_spectral_ball(D.rightCols(p), cfg.eps_B);
    return P;
  };

  Eigen::SelfAdjointEigenSolver<Matrix> es(C, Eigen::EigenvaluesOnly);
  const double lipschitz = 2.0 * (l1 + l2) * std::max(es.eigenvalues().maxCoeff(), 1e-300);
  double step = 1.0 / lipschitz;

  Matrix D = Matrix::Zero(d, d + p);
  Matrix extrapolated = D;
  double momentum = 1.0;
  LossValue current = objective(D);
  result.curve.push_back({0, current});

  int it = 0;
  for (; it < cfg.max_iterations; ++it) {
    Matrix candidate = project(extrapolated - step * gradient(extrapolated));
    LossValue cand_loss = objective(candidate);
    // Backtracking guard against round-off in the Lipschitz estimate.
    int backtracks = 0;
    while (cand_loss.J > current.J + 1e-12 * std::abs(current.J) && backtracks < 30) {
      step *= 0.5;
      candidate = project(D - step * gradient(D));
      cand_loss = objective(candidate);
      ++backtracks;
    }
    const double next_momentum = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
    const Matrix previous = D;
    const bool accept = cand_loss.J <= current.J;
    if (accept) {
      D = candidate;
      current = cand_loss;
    }
    extrapolated = D + (momentum / next_momentum) * (candidate - D) +
                   ((momentum - 1.0) / next_momentum) * (D - previous);
    momentum = next_momentum;
    result.curve.push_back({it + 1, current});
    const double change = (D - previous).norm();
    if (accept && change <= cfg.tolerance * std::max(1.0, D.norm())) {
      ++it;
      break;
    }
  }
  result.iterations = it;

  result.delta_A = D.leftCols(d);
  result.delta_B = D.rightCols(p);
  KoopmanModel& refined = result.model;
  refined.A = model.A + result.delta_A;
  refined.B = model.B + result.delta_B;
  refined.provenance.source = "refined";
  refined.refinement = Refinement{model.A, model.B, result.delta_A, result.delta_B, cfg.eps_A, cfg.eps_B};

  result.initial_loss = evaluate_loss(model, data, l1, l2);
  result.final_loss = evaluate_loss(refined, data, l1, l2);
  if (result.final_loss.J > result.initial_loss.J) {
    // Gram-based and direct evaluations can disagree in the last bits; zero is feasible.
    refined.A = model.A;
    refined.B = model.B;
    result.delta_A.setZero();
    result.delta_B.setZero();
    refined.refinement = Refinement{model.A, model.B, result.delta_A, result.delta_B, cfg.eps_A, cfg.eps_B};
    result.final_loss = result.initial_loss;
    result.warnings.emplace_back("refine: no decrease found; returning the initial matrices");
  }
  return result;
}

}  // namespace kcl
