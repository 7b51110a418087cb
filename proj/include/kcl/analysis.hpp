#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "kcl/control.hpp"
#include "kcl/dynamics.hpp"
#include "kcl/model.hpp"
#include "kcl/sampling.hpp"
#include "kcl/training.hpp"

namespace kcl {

/// r(x,u) = g(F(x,u)) - (A g(x) + B u), with the true F.
inline Vector modeling_error(const KoopmanModel& model, const DynamicalSystem& sys, const Vector& x,
                             const Vector& u, const IntegrationConfig& cfg = {}) {
  require(model.n() == sys.n && model.p() == sys.p, "modeling_error: model/system mismatch");
  const Vector next = discrete_step(sys, x, u, cfg);
  return model.lift(next) - model.step(model.lift(x), u);
}

/// Two swept coordinates of the joint vector z = [x; u]; other coordinates from `base`.
struct ErrorGrid {
  std::array<int, 2> axes{0, 1};
  std::array<double, 2> lower{-4.0, -2.0};
  std::array<double, 2> upper{4.0, 2.0};
  std::array<int, 2> counts{81, 41};
  Vector base;             // length n + p
  bool state_block = false;  // norm of [I 0] r instead of the full r

  double value(int axis, int index) const {
    const auto a = static_cast<std::size_t>(axis);
    if (counts[a] <= 1) return lower[a];
    return lower[a] + (upper[a] - lower[a]) * index / (counts[a] - 1);
  }
};

struct ErrorField {
  ErrorGrid grid;
  Matrix values;          // counts[0] x counts[1], |r|_2 per cell (NaN where flagged)
  int nonfinite_cells = 0;

  double max_abs_difference(const ErrorField& other) const {
    require(values.rows() == other.values.rows() && values.cols() == other.values.cols(),
            "ErrorField: grids differ");
    return (values - other.values).cwiseAbs().maxCoeff();
  }
};

inline ErrorField error_field(const KoopmanModel& model, const DynamicalSystem& sys, const ErrorGrid& grid,
                              const IntegrationConfig& cfg = {}) {
  const int dim = sys.n + sys.p;
  require(grid.base.size() == dim, "error_field: base point must have length n + p");
  for (std::size_t a = 0; a < 2; ++a) {
    require(grid.axes[a] >= 0 && grid.axes[a] < dim, "error_field: axis out of range");
    require(grid.counts[a] >= 1, "error_field: counts must be >= 1");
  }
  require(grid.axes[0] != grid.axes[1], "error_field: swept axes must differ");
  ErrorField field{grid, Matrix(grid.counts[0], grid.counts[1]), 0};
  for (int i = 0; i < grid.counts[0]; ++i) {
    for (int j = 0; j < grid.counts[1]; ++j) {
      Vector z = grid.base;
      z[grid.axes[0]] = grid.value(0, i);
      z[grid.axes[1]] = grid.value(1, j);
      double value = std::numeric_limits<double>::quiet_NaN();
      try {
        const Vector r = modeling_error(model, sys, z.head(sys.n), z.tail(sys.p), cfg);
        value = grid.state_block ? r.head(sys.n).norm() : r.norm();
      } catch (const NumericError&) {
      }
      if (!std::isfinite(value)) {
        ++field.nonfinite_cells;
        value = std::numeric_limits<double>::quiet_NaN();
      }
      field.values(i, j) = value;
    }
  }
  return field;
}

/// Product of box-uniform distributions on X and U with a sample budget.
struct SamplingMeasure {
  Box x_box;
  Box u_box;
  std::size_t samples = 10000;
  std::uint64_t seed = 0;

  double volume() const { return x_box.volume() * u_box.volume(); }

  void validate() const {
    require(x_box.dim() >= 1 && u_box.dim() >= 1, "SamplingMeasure: empty boxes");
    require(samples >= 1, "SamplingMeasure: need at least one sample");
  }
};

struct MonteCarloEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

inline MonteCarloEstimate monte_carlo(const std::vector<double>& values) {
  MonteCarloEstimate e;
  const auto m = static_cast<double>(values.size());
  if (values.empty()) return e;
  double sum = 0.0;
  for (double v : values) sum += v;
  e.mean = sum / m;
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - e.mean) * (v - e.mean);
    e.standard_error = std::sqrt(ss / (m - 1.0) / m);
  }
  return e;
}

struct RNormEstimate {
  MonteCarloEstimate measure;  // integral of |r|^2 against the (probability) sampling measure
  double lebesgue = 0.0;       // box volume times the measure value: integral dx du over the boxes
  double lebesgue_standard_error = 0.0;
  std::size_t samples = 0;
};

inline std::vector<double> squared_residuals(const KoopmanModel& model, const TrajectoryDataset& data) {
  const LiftedData lifted = lift_dataset(data, model.observables);
  const Matrix R = lifted.Gy - (model.A * lifted.Gx + model.B * lifted.U);
  std::vector<double> out(static_cast<std::size_t>(R.cols()));
  for (Eigen::Index j = 0; j < R.cols(); ++j) out[static_cast<std::size_t>(j)] = R.col(j).squaredNorm();
  return out;
}

/// Monte-Carlo estimate of |r|^2_{L2} from the samples of `data`.
inline RNormEstimate estimate_r_norm(const KoopmanModel& model, const TrajectoryDataset& data, double volume) {
  require(data.size() >= 2, "estimate_r_norm: need at least two samples");
  RNormEstimate est;
  est.measure = monte_carlo(squared_residuals(model, data));
  est.lebesgue = volume * est.measure.mean;
  est.lebesgue_standard_error = volume * est.measure.standard_error;
  est.samples = data.size();
  return est;
}

inline RNormEstimate estimate_r_norm(const KoopmanModel& model, const DynamicalSystem& sys,
                                     const SamplingMeasure& measure, const IntegrationConfig& cfg = {}) {
  measure.validate();
  const auto data = sample_pairs(sys, measure.x_box, measure.u_box, measure.samples, measure.seed, cfg);
  return estimate_r_norm(model, data, measure.volume());
}

enum class PredictionMode { Relift, Linear };

/// Decoded open-loop prediction x^_{k+1} = W (A g(x^_k) + B u_k); Linear mode
/// propagates the lifted vector instead of re-lifting the decoded state.
inline std::vector<Vector> predict_states(const KoopmanModel& model, const Vector& x0,
                                          const std::vector<Vector>& inputs,
                                          PredictionMode mode = PredictionMode::Relift,
                                          double blowup_radius = 1e12) {
  require_dim(x0, model.n(), "predict_states x0");
  std::vector<Vector> out{x0};
  out.reserve(inputs.size() + 1);
  Vector xi = model.lift(x0);
  for (const auto& u : inputs) {
    require_dim(u, model.p(), "predict_states input");
    if (mode == PredictionMode::Relift) xi = model.lift(out.back());
    xi = model.step(xi, u);
    Vector x = model.decode(xi);
    if (!x.allFinite() || x.norm() > blowup_radius) break;
    out.push_back(std::move(x));
  }
  return out;
}

/// Root-mean-square error over all components of x_1..x_T (x_0 is shared).
inline double trajectory_rmse(const std::vector<Vector>& predicted, const std::vector<Vector>& truth) {
  require(!truth.empty(), "trajectory_rmse: empty reference");
  if (predicted.size() != truth.size()) return std::numeric_limits<double>::infinity();
  double ss = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 1; k < truth.size(); ++k) {
    ss += (predicted[k] - truth[k]).squaredNorm();
    count += static_cast<std::size_t>(truth[k].size());
  }
  return count ? std::sqrt(ss / static_cast<double>(count)) : 0.0;
}

/// u = 0 prediction RMSE averaged (in the mean-square sense) over initial states.
inline double prediction_rmse(const KoopmanModel& model, const DynamicalSystem& sys,
                              const std::vector<Vector>& x0s, int steps, const IntegrationConfig& cfg) {
  double ss = 0.0;
  for (const auto& x0 : x0s) {
    const std::vector<Vector> inputs(static_cast<std::size_t>(steps), Vector::Zero(sys.p));
    const double r = trajectory_rmse(predict_states(model, x0, inputs), simulate_open_loop(sys, x0, inputs, cfg));
    ss += r * r;
  }
  return std::sqrt(ss / static_cast<double>(x0s.size()));
}

struct AccumulationStep {
  int k = 0;
  Vector lifted_true;  // g(x_{k+1}) from simulating the plant
  Vector ideal;        // (A+BK)^{k+1} g(x_0)
  Vector accumulated;  // sum_{i=0}^{k} (A+BK)^i r(x_{k-i}, K g(x_{k-i}))
  double defect = 0.0; // |lifted_true - ideal - accumulated|_2
};

struct AccumulationReport {
  std::vector<AccumulationStep> steps;
  double max_defect = 0.0;
  bool truncated = false;  // plant left the blow-up radius
};

/// Splits the lifted closed-loop trajectory of the true plant into the nominal
/// model response and the propagated modeling residuals.
inline AccumulationReport error_accumulation(const KoopmanModel& model, const DynamicalSystem& sys,
                                             const Matrix& K, const Vector& x0, int steps,
                                             const IntegrationConfig& cfg = {},
                                             double blowup_radius = 1e6) {
  require_dim(x0, sys.n, "error_accumulation x0");
  require(K.rows() == model.p() && K.cols() == model.lifted_dim(), "error_accumulation: gain must be p x (n+N)");
  const Matrix closed = model.A + model.B * K;
  AccumulationReport report;
  Vector x = x0;
  Vector ideal = model.lift(x0);
  Vector accumulated = Vector::Zero(model.lifted_dim());
  for (int k = 0; k < steps; ++k) {
    const Vector u = K * model.lift(x);
    Vector next;
    try {
      next = discrete_step(sys, x, u, cfg);
    } catch (const NumericError&) {
      report.truncated = true;
      break;
    }
    if (next.norm() > blowup_radius) {
      report.truncated = true;
      break;
    }
    const Vector r = model.lift(next) - model.step(model.lift(x), u);
    ideal = closed * ideal;
    accumulated = closed * accumulated + r;
    AccumulationStep step;
    step.k = k;
    step.lifted_true = model.lift(next);
    step.ideal = ideal;
    step.accumulated = accumulated;
    step.defect = (step.lifted_true - ideal - accumulated).norm();
    report.max_defect = std::max(report.max_defect, step.defect);
    report.steps.push_back(std::move(step));
    x = std::move(next);
  }
  return report;
}

/// Terms of |r|^2 <= |g o F|^2 + |[A B]| (|[A B]| |h|^2 + 2 <|g o F|, |h|>), h = [g(x); u],
/// all estimated on one shared sample set.
struct BoundReport {
  std::size_t samples = 0;
  MonteCarloEstimate lhs;             // |r|^2_{L2}
  MonteCarloEstimate lifted_next_sq;  // |g o F|^2_{L2}
  double ab_norm = 0.0;               // |[A B]|_2
  MonteCarloEstimate h_sq;            // |h|^2_{L2}
  MonteCarloEstimate inner;           // <|g o F|_2, |h|_2>_{L2}
  double rhs = 0.0;
  double rhs_standard_error = 0.0;
  double combined_standard_error = 0.0;  // sqrt(se_lhs^2 + se_rhs^2)
  std::size_t pointwise_violations = 0;  // samples breaking the un-integrated triangle bound
  double volume = 1.0;

  bool holds(double sigmas = 3.0) const { return lhs.mean <= rhs + sigmas * combined_standard_error; }
};

inline BoundReport error_bound(const KoopmanModel& model, const TrajectoryDataset& data, double volume = 1.0) {
  require(data.size() >= 2, "error_bound: need at least two samples");
  const LiftedData lifted = lift_dataset(data, model.observables);
  Matrix AB(model.lifted_dim(), model.lifted_dim() + model.p());
  AB << model.A, model.B;
  const double ab = spectral_norm(AB);
  const Matrix R = lifted.Gy - AB * lifted.regressor();

  const auto M = static_cast<std::size_t>(R.cols());
  std::vector<double> lhs(M), gf(M), hh(M), inner(M), rhs(M);
  BoundReport report;
  for (std::size_t j = 0; j < M; ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    const double r_norm = R.col(c).norm();
    const double gf_norm = lifted.Gy.col(c).norm();
    const double h_norm = std::sqrt(lifted.Gx.col(c).squaredNorm() + lifted.U.col(c).squaredNorm());
    lhs[j] = r_norm * r_norm;
    gf[j] = gf_norm * gf_norm;
    hh[j] = h_norm * h_norm;
    inner[j] = gf_norm * h_norm;
    rhs[j] = gf[j] + ab * (ab * hh[j] + 2.0 * inner[j]);
    // Triangle inequality before squaring; relative slack covers round-off only.
    if (r_norm > (gf_norm + ab * h_norm) * (1.0 + 1e-12) + 1e-300) ++report.pointwise_violations;
  }
  report.samples = M;
  report.volume = volume;
  report.lhs = monte_carlo(lhs);
  report.lifted_next_sq = monte_carlo(gf);
  report.ab_norm = ab;
  report.h_sq = monte_carlo(hh);
  report.inner = monte_carlo(inner);
  report.rhs = report.lifted_next_sq.mean + ab * (ab * report.h_sq.mean + 2.0 * report.inner.mean);
  report.rhs_standard_error = monte_carlo(rhs).standard_error;
  report.combined_standard_error = std::hypot(report.lhs.standard_error, report.rhs_standard_error);
  return report;
}

inline BoundReport error_bound(const KoopmanModel& model, const DynamicalSystem& sys,
                               const SamplingMeasure& measure, const IntegrationConfig& cfg = {}) {
  measure.validate();
  const auto data = sample_pairs(sys, measure.x_box, measure.u_box, measure.samples, measure.seed, cfg);
  return error_bound(model, data, measure.volume());
}

/// Same difference equation in coordinates alpha * g: scale the observables by
/// alpha and B by alpha; A is unchanged and decoding divides by the scale.
inline KoopmanModel scale_model(const KoopmanModel& model, double alpha) {
  require(alpha != 0.0 && std::isfinite(alpha), "scale_model: alpha must be finite and nonzero");
  KoopmanModel out = model;
  if (alpha == 1.0) return out;
  out.observables.set_scale(model.observables.scale() * alpha);
  out.B = alpha * model.B;
  if (out.refinement) {
    out.refinement->B_initial *= alpha;
    out.refinement->delta_B *= alpha;
  }
  out.provenance.source = model.provenance.source + "+scaled";
  return out;
}

}  // namespace kcl
