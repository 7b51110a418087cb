#pragma once

#include <limits>
#include <string>

#include <Eigen/SVD>

#include "kcl/model.hpp"
#include "kcl/sampling.hpp"

namespace kcl {

/// Rank and conditioning of the regressor [G_x; U].
struct RankReport {
  Eigen::Index rank = 0;
  Eigen::Index columns = 0;  // regressor rows n+N+p (unknowns per output row)
  double condition_number = 0.0;
  bool deficient = false;
};

struct EdmdFit {
  Matrix A;
  Matrix B;
  double residual = 0.0;  // |A G_x + B U - G_y|_F over the fitted rows
  RankReport rank;
  Eigen::Index row_begin = 0;  // fitted rows [row_begin, row_end) of the full system
  Eigen::Index row_end = 0;
};

struct RowRange {
  Eigen::Index begin = 0;  // zero-based, half-open
  Eigen::Index end = 0;
};

/// Lifted data matrices for a fixed observable map.
struct LiftedData {
  Matrix Gx;  // (n+N) x M
  Matrix U;   // p x M
  Matrix Gy;  // (n+N) x M
  Matrix Y;   // n x M

  Matrix regressor() const {
    Matrix Z(Gx.rows() + U.rows(), Gx.cols());
    Z << Gx, U;
    return Z;
  }
};

inline LiftedData lift_dataset(const TrajectoryDataset& data, const ObservableMap& obs) {
  require(!data.empty(), "lift_dataset: dataset is empty");
  require(data.n() == obs.n(), "lift_dataset: dataset and observables disagree on n");
  LiftedData out;
  const Matrix X = data.X();
  out.Y = data.Y();
  out.U = data.U();
  out.Gx = obs.lift_batch(X);
  out.Gy = obs.lift_batch(out.Y);
  require(out.Gx.allFinite() && out.Gy.allFinite(), "lift_dataset: lifting produced non-finite values");
  return out;
}

/// Minimum-norm least squares for the rows of [A B] in `rows`.
inline EdmdFit fit_rows(const LiftedData& lifted, RowRange rows) {
  const Eigen::Index d = lifted.Gx.rows();
  require(rows.begin >= 0 && rows.end <= d, "fit_rows: row range outside 0..n+N");
  require(rows.begin < rows.end, "fit_rows: empty row range");
  const Matrix Z = lifted.regressor();
  const Eigen::Index p = lifted.U.rows();

  Eigen::BDCSVD<Matrix> svd(Z.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();

  const Eigen::Index count = rows.end - rows.begin;
  const Matrix target = lifted.Gy.middleRows(rows.begin, count);
  const Matrix AB = svd.solve(target.transpose()).transpose();

  EdmdFit fit;
  fit.A = AB.leftCols(d);
  fit.B = AB.rightCols(p);
  fit.residual = (AB * Z - target).norm();
  fit.rank.rank = svd.rank();
  fit.rank.columns = Z.rows();
  const double smallest = sv.size() == Z.rows() ? sv[sv.size() - 1] : 0.0;
  fit.rank.condition_number =
      smallest > 0.0 ? sv[0] / smallest : std::numeric_limits<double>::infinity();
  fit.rank.deficient = fit.rank.rank < Z.rows();
  fit.row_begin = rows.begin;
  fit.row_end = rows.end;
  return fit;
}

inline EdmdFit fit_rows(const TrajectoryDataset& data, const ObservableMap& obs, RowRange rows) {
  return fit_rows(lift_dataset(data, obs), rows);
}

/// argmin over [A B] of |A G_x + B U - G_y|_F.
inline EdmdFit fit(const TrajectoryDataset& data, const ObservableMap& obs) {
  return fit_rows(data, obs, RowRange{0, obs.lifted_dim()});
}

inline KoopmanModel fit_model(const TrajectoryDataset& data, const ObservableMap& obs) {
  const EdmdFit f = fit(data, obs);
  return make_model(f.A, f.B, obs, "edmd");
}

}  // namespace kcl
