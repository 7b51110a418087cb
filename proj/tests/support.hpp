#pragma once

#include <random>

#include "kcl/common.hpp"

namespace kcl::test {

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix M(rows, cols);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = dist(rng);
  return M;
}

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  return random_matrix(rng, n, 1, scale);
}

/// Random matrix rescaled to the given spectral radius.
inline Matrix random_stable(std::mt19937_64& rng, Eigen::Index n, double radius) {
  Matrix A = random_matrix(rng, n, n);
  const double rho = A.eigenvalues().cwiseAbs().maxCoeff();
  return A * (radius / rho);
}

}  // namespace kcl::test
