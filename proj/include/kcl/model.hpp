#pragma once

#include <optional>
#include <string>

#include "kcl/dynamics.hpp"
#include "kcl/observables.hpp"

namespace kcl {

/// Step-2 record: the matrices before refinement and the applied corrections.
struct Refinement {
  Matrix A_initial;
  Matrix B_initial;
  Matrix delta_A;
  Matrix delta_B;
  double eps_A = 0.0;
  double eps_B = 0.0;
};

struct ModelProvenance {
  std::string source = "unspecified";  // edmd | step1 | refined | scaled | ...
  std::string config_hash;
  std::string system;                  // plant name the data came from
  ParameterMap system_parameters;
  IntegrationConfig integration;
};

/// Lifted LTI model xi+ = A xi + B u over the observables g(x) = alpha [x; g~(x)].
/// A and B are the matrices in effect; for refined models they equal
/// A_initial + delta_A and B_initial + delta_B.
struct KoopmanModel {
  Matrix A;
  Matrix B;
  ObservableMap observables;
  ModelProvenance provenance;
  std::optional<Refinement> refinement;

  Eigen::Index n() const { return observables.n(); }
  Eigen::Index N() const { return observables.N(); }
  Eigen::Index p() const { return B.cols(); }
  Eigen::Index lifted_dim() const { return observables.lifted_dim(); }

  void validate() const {
    const auto d = lifted_dim();
    require(A.rows() == d && A.cols() == d,
            "KoopmanModel: A must be " + std::to_string(d) + "x" + std::to_string(d));
    require(B.rows() == d && B.cols() >= 1, "KoopmanModel: B must have n+N rows");
  }

  Vector lift(const Vector& x) const { return observables.lift(x); }
  Vector decode(const Vector& xi) const { return observables.decode(xi); }

  /// A xi + B u.
  Vector step(const Vector& xi, const Vector& u) const { return A * xi + B * u; }
};

inline KoopmanModel make_model(Matrix A, Matrix B, ObservableMap observables, std::string source) {
  KoopmanModel model{std::move(A), std::move(B), std::move(observables), {}, std::nullopt};
  model.provenance.source = std::move(source);
  model.validate();
  return model;
}

}  // namespace kcl
