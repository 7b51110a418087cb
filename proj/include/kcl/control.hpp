#pragma once

#include <array>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "kcl/dynamics.hpp"
#include "kcl/model.hpp"

namespace kcl {

/// Quadratic stage cost xi^T Q xi + u^T R u on the lifted state.
struct LQRWeights {
  Matrix Q;
  Matrix R;

  void validate() const {
    require(Q.rows() == Q.cols(), "LQRWeights: Q must be square");
    require(R.rows() == R.cols(), "LQRWeights: R must be square");
    require((Q - Q.transpose()).cwiseAbs().maxCoeff() <= 1e-12, "LQRWeights: Q must be symmetric");
    require((R - R.transpose()).cwiseAbs().maxCoeff() <= 1e-12, "LQRWeights: R must be symmetric");
    Eigen::LLT<Matrix> llt(R);
    require(llt.info() == Eigen::Success, "LQRWeights: R must be positive definite");
  }

  /// Q = diag(state_weights, 0_N): only physical coordinates are penalized.
  static LQRWeights on_states(const Vector& state_weights, Eigen::Index N, const Matrix& R) {
    const auto n = state_weights.size();
    LQRWeights w{Matrix::Zero(n + N, n + N), R};
    w.Q.topLeftCorner(n, n) = state_weights.asDiagonal();
    return w;
  }
};

inline double spectral_radius(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(M, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Static gain applied literally as u = K xi (negative feedback folded into K).
struct FeedbackGain {
  Matrix K;
  LQRWeights weights;
  std::string design_hash;
  double closed_loop_spectral_radius = 0.0;

  bool stable() const { return closed_loop_spectral_radius < 1.0; }

  static FeedbackGain manual(Matrix K, LQRWeights weights) {
    FeedbackGain g;
    g.K = std::move(K);
    g.weights = std::move(weights);
    g.design_hash = "manual";
    return g;
  }
};

struct DareSolution {
  Matrix P;
  long iterations = 0;
  double residual = 0.0;  // Frobenius norm of the Riccati equation defect
};

inline Matrix riccati_map(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                          const Matrix& P) {
  const Matrix PA = P * A;
  const Matrix BtPA = B.transpose() * PA;
  const Matrix S = R + B.transpose() * P * B;
  return Q + A.transpose() * PA - BtPA.transpose() * S.ldlt().solve(BtPA);
}

/// Same map in the form Q + K^T R K + (A + B K)^T P (A + B K), a sum of PSD terms
/// that avoids cancellation when A has large eigenvalues.
inline Matrix riccati_map_joseph(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                                 const Matrix& P) {
  const Matrix S = R + B.transpose() * P * B;
  const Matrix K = -S.ldlt().solve(B.transpose() * P * A);
  const Matrix closed = A + B * K;
  return Q + K.transpose() * R * K + closed.transpose() * P * closed;
}

inline double riccati_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                               const Matrix& P) {
  return (P - riccati_map(A, B, Q, R, P)).norm();
}

/// Fixed-point (value) iteration on the discrete algebraic Riccati equation,
/// started from P = Q. Stops when the update falls below tol * max(1, |P|_F)
/// or below the round-off floor 8 eps |A|_F^2 |P|_F of one map evaluation.
inline DareSolution solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                               double tol = 1e-12, long max_iter = 1'000'000) {
  require(A.rows() == A.cols(), "solve_dare: A must be square");
  require(B.rows() == A.rows(), "solve_dare: B must have as many rows as A");
  require(Q.rows() == A.rows() && Q.cols() == A.cols(), "solve_dare: Q has wrong shape");
  require(R.rows() == B.cols() && R.cols() == B.cols(), "solve_dare: R has wrong shape");
  LQRWeights{Q, R}.validate();

  Matrix P = Q;
  double change = 0.0;
  const double a2 = A.squaredNorm();
  for (long it = 1; it <= max_iter; ++it) {
    Matrix next = riccati_map_joseph(A, B, Q, R, P);
    next = 0.5 * (next + next.transpose());
    if (!next.allFinite()) {
      throw ConvergenceError("solve_dare: iterate became non-finite at iteration " + std::to_string(it),
                             change);
    }
    change = (next - P).norm();
    P = std::move(next);
    const double floor = 8.0 * std::numeric_limits<double>::epsilon() * a2 * P.norm();
    if (change < std::max(tol * std::max(1.0, P.norm()), floor)) {
      return DareSolution{P, it, riccati_residual(A, B, Q, R, P)};
    }
  }
  throw ConvergenceError("solve_dare: no convergence in " + std::to_string(max_iter) +
                             " iterations (last update " + std::to_string(change) +
                             "); pair may be unstabilizable",
                         change);
}

/// K = -(R + B^T P B)^{-1} B^T P A.
inline FeedbackGain lqr_gain(const Matrix& A, const Matrix& B, const LQRWeights& weights,
                             double tol = 1e-12, long max_iter = 1'000'000) {
  const DareSolution dare = solve_dare(A, B, weights.Q, weights.R, tol, max_iter);
  const Matrix& P = dare.P;
  const Matrix S = weights.R + B.transpose() * P * B;
  FeedbackGain gain;
  gain.K = -S.ldlt().solve(B.transpose() * P * A);
  gain.weights = weights;
  std::uint64_t h = hash_matrix(A);
  h = hash_matrix(B, h);
  h = hash_matrix(weights.Q, h);
  h = hash_matrix(weights.R, h);
  gain.design_hash = hex64(h);
  gain.closed_loop_spectral_radius = spectral_radius(A + B * gain.K);
  return gain;
}

inline FeedbackGain lqr_gain(const KoopmanModel& model, const LQRWeights& weights) {
  return lqr_gain(model.A, model.B, weights);
}

struct ClosedLoopOptions {
  double tol = 0.05;           // convergence radius on |x|
  int tail = 10;               // trailing samples that must stay inside tol
  double blowup_radius = 1e6;  // |x| beyond this truncates the run
};

struct ClosedLoopResult {
  std::vector<Vector> states;  // x_0 .. x_T
  std::vector<Vector> inputs;  // u_0 .. u_{T-1}
  std::vector<double> stage_costs;
  double cost = 0.0;
  bool converged = false;
  bool diverged = false;
  int settle_index = -1;  // first k after which |x_j| < tol for all j >= k, -1 if none

  /// Remaining accumulated cost from step k to the horizon.
  std::vector<double> cost_to_go() const {
    std::vector<double> out(stage_costs.size() + 1, 0.0);
    for (std::size_t k = stage_costs.size(); k-- > 0;) out[k] = out[k + 1] + stage_costs[k];
    return out;
  }
};

inline void finish_convergence(ClosedLoopResult& result, const ClosedLoopOptions& opts) {
  int settle = -1;
  for (int k = static_cast<int>(result.states.size()) - 1; k >= 0; --k) {
    if (result.states[static_cast<std::size_t>(k)].norm() < opts.tol) {
      settle = k;
    } else {
      break;
    }
  }
  result.settle_index = settle;
  const int tail = std::min<int>(opts.tail, static_cast<int>(result.states.size()));
  const int inside = settle < 0 ? 0 : static_cast<int>(result.states.size()) - settle;
  result.converged = !result.diverged && settle >= 0 && inside >= tail;
}

/// True plant under u_k = K g(x_k).
inline ClosedLoopResult simulate_true_closed_loop(const DynamicalSystem& sys, const KoopmanModel& model,
                                                  const FeedbackGain& gain, const Vector& x0, int steps,
                                                  const IntegrationConfig& cfg,
                                                  const ClosedLoopOptions& opts = {}) {
  require_dim(x0, sys.n, "simulate_true_closed_loop x0");
  require(model.n() == sys.n && model.p() == sys.p, "simulate_true_closed_loop: model/system mismatch");
  require(gain.K.rows() == sys.p && gain.K.cols() == model.lifted_dim(),
          "simulate_true_closed_loop: gain must be p x (n+N)");
  require(steps >= 0, "simulate_true_closed_loop: steps must be >= 0");
  const bool weighted = gain.weights.Q.rows() == model.lifted_dim() && gain.weights.R.rows() == sys.p;
  // Stage cost on the physical state: the state block of Q, whatever the observable scale.
  const Matrix Qx = weighted ? Matrix(gain.weights.Q.topLeftCorner(sys.n, sys.n)) : Matrix::Identity(sys.n, sys.n);
  const Matrix Ru = weighted ? gain.weights.R : Matrix::Identity(sys.p, sys.p);

  ClosedLoopResult result;
  result.states.push_back(x0);
  Vector x = x0;
  for (int k = 0; k < steps; ++k) {
    const Vector xi = model.lift(x);
    const Vector u = gain.K * xi;
    Vector next;
    try {
      next = discrete_step(sys, x, u, cfg);
    } catch (const NumericError&) {
      result.diverged = true;
      break;
    }
    const double stage = x.dot(Qx * x) + u.dot(Ru * u);
    result.inputs.push_back(u);
    result.stage_costs.push_back(stage);
    result.cost += stage;
    if (!next.allFinite() || next.norm() > opts.blowup_radius) {
      result.diverged = true;
      break;
    }
    result.states.push_back(next);
    x = std::move(next);
  }
  finish_convergence(result, opts);
  return result;
}

/// Open loop of the true plant with a fixed input sequence.
inline std::vector<Vector> simulate_open_loop(const DynamicalSystem& sys, const Vector& x0,
                                              const std::vector<Vector>& inputs,
                                              const IntegrationConfig& cfg) {
  std::vector<Vector> states{x0};
  for (const auto& u : inputs) states.push_back(discrete_step(sys, states.back(), u, cfg));
  return states;
}

/// xi_{k+1} = (A + B K) xi_k.
inline std::vector<Vector> simulate_model_closed_loop(const KoopmanModel& model, const Matrix& K,
                                                      const Vector& xi0, int steps) {
  require_dim(xi0, model.lifted_dim(), "simulate_model_closed_loop xi0");
  require(K.rows() == model.p() && K.cols() == model.lifted_dim(),
          "simulate_model_closed_loop: gain must be p x (n+N)");
  const Matrix closed = model.A + model.B * K;
  std::vector<Vector> out{xi0};
  out.reserve(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k < steps; ++k) out.push_back(closed * out.back());
  return out;
}

/// Two swept state coordinates; the remaining coordinates come from `base`.
struct BasinGrid {
  std::array<int, 2> axes{0, 1};
  std::array<double, 2> lower{-1.0, -1.0};
  std::array<double, 2> upper{1.0, 1.0};
  std::array<int, 2> counts{11, 11};
  Vector base;

  double value(int axis, int index) const {
    const auto a = static_cast<std::size_t>(axis);
    if (counts[a] <= 1) return lower[a];
    return lower[a] + (upper[a] - lower[a]) * index / (counts[a] - 1);
  }
};

struct BasinResult {
  BasinGrid grid;
  std::vector<std::vector<bool>> converged;  // [i][j]: axis-0 index i, axis-1 index j

  int converged_count() const {
    int total = 0;
    for (const auto& row : converged)
      for (bool c : row) total += c ? 1 : 0;
    return total;
  }
  int cell_count() const { return grid.counts[0] * grid.counts[1]; }
};

inline BasinResult estimate_basin(const DynamicalSystem& sys, const KoopmanModel& model,
                                  const FeedbackGain& gain, const BasinGrid& grid, int horizon,
                                  const IntegrationConfig& cfg, const ClosedLoopOptions& opts = {}) {
  require(grid.base.size() == sys.n, "estimate_basin: base point must have dimension n");
  for (std::size_t a = 0; a < 2; ++a) {
    require(grid.axes[a] >= 0 && grid.axes[a] < sys.n, "estimate_basin: axis index out of range");
    require(grid.counts[a] >= 1, "estimate_basin: counts must be >= 1");
  }
  require(grid.axes[0] != grid.axes[1] || grid.counts[1] == 1,
          "estimate_basin: swept axes must differ");
  BasinResult result{grid, {}};
  result.converged.assign(static_cast<std::size_t>(grid.counts[0]),
                          std::vector<bool>(static_cast<std::size_t>(grid.counts[1]), false));
  for (int i = 0; i < grid.counts[0]; ++i) {
    for (int j = 0; j < grid.counts[1]; ++j) {
      Vector x0 = grid.base;
      x0[grid.axes[0]] = grid.value(0, i);
      if (grid.counts[1] > 1 || grid.axes[1] != grid.axes[0]) x0[grid.axes[1]] = grid.value(1, j);
      const auto run = simulate_true_closed_loop(sys, model, gain, x0, horizon, cfg, opts);
      result.converged[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = run.converged;
    }
  }
  return result;
}

}  // namespace kcl
