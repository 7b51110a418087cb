#pragma once

#include <array>
#include <functional>
#include <map>
#include <string>
#include <utility>

#include "kcl/common.hpp"

namespace kcl {

enum class SystemKind { Continuous, Discrete };

using ParameterMap = std::map<std::string, double>;

/// Controlled system x' = f(x,u) (continuous) or x+ = F(x,u) (discrete).
/// Immutable after construction.
struct DynamicalSystem {
  using Evaluator = std::function<Vector(const Vector&, const Vector&)>;

  std::string name;
  int n = 0;
  int p = 0;
  SystemKind kind = SystemKind::Continuous;
  Box domain;        // sampling/analysis range only; never enforced
  Evaluator evaluate;  // vector field or map, depending on kind
  ParameterMap parameters;
};

/// Sampling period and the number of RK4 substeps inside it.
struct IntegrationConfig {
  double dt = 0.1;
  int substeps = 10;

  double step() const { return dt / substeps; }

  void validate() const {
    require(dt > 0.0 && std::isfinite(dt), "IntegrationConfig: dt must be positive");
    require(substeps >= 1, "IntegrationConfig: substeps must be >= 1");
  }
};

inline void check_dims(const DynamicalSystem& sys, const Vector& x, const Vector& u) {
  require_dim(x, sys.n, sys.name + " state");
  require_dim(u, sys.p, sys.name + " input");
}

inline Vector eval_vector_field(const DynamicalSystem& sys, const Vector& x, const Vector& u) {
  if (sys.kind != SystemKind::Continuous) {
    throw UnsupportedOperation("eval_vector_field: '" + sys.name + "' is a discrete map");
  }
  check_dims(sys, x, u);
  return sys.evaluate(x, u);
}

/// One classical RK4 step with u held constant.
inline Vector rk4_step(const DynamicalSystem& sys, const Vector& x, const Vector& u, double h) {
  if (sys.kind != SystemKind::Continuous) {
    throw UnsupportedOperation("rk4_step: '" + sys.name + "' is a discrete map");
  }
  require(h > 0.0, "rk4_step: step size must be positive");
  check_dims(sys, x, u);

  auto stage = [&](const Vector& arg, const char* label) {
    Vector k = sys.evaluate(arg, u);
    if (!k.allFinite()) {
      throw NumericError("rk4_step: non-finite derivative at stage " + std::string(label) + " of '" +
                         sys.name + "'");
    }
    return k;
  };
  const Vector k1 = stage(x, "k1");
  const Vector k2 = stage(x + 0.5 * h * k1, "k2");
  const Vector k3 = stage(x + 0.5 * h * k2, "k3");
  const Vector k4 = stage(x + h * k3, "k4");
  Vector next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) {
    throw NumericError("rk4_step: non-finite state after update of '" + sys.name + "'");
  }
  return next;
}

/// Sampled map F(x_k, u_k): substeps RK4 steps of dt/substeps, or the map itself.
inline Vector discrete_step(const DynamicalSystem& sys, const Vector& x, const Vector& u,
                            const IntegrationConfig& cfg) {
  check_dims(sys, x, u);
  if (sys.kind == SystemKind::Discrete) {
    Vector next = sys.evaluate(x, u);
    if (!next.allFinite()) {
      throw NumericError("discrete_step: non-finite map value of '" + sys.name + "'");
    }
    return next;
  }
  cfg.validate();
  const double h = cfg.step();
  Vector state = x;
  for (int s = 0; s < cfg.substeps; ++s) state = rk4_step(sys, state, u, h);
  return state;
}

namespace systems {

/// x+ = x^2 e^{-x} + u.
inline DynamicalSystem motivating(const ParameterMap& overrides = {}) {
  require(overrides.empty(), "motivating: system has no parameters");
  DynamicalSystem sys;
  sys.name = "motivating";
  sys.n = 1;
  sys.p = 1;
  sys.kind = SystemKind::Discrete;
  sys.domain = Box::uniform(1, -4.0, 4.0);
  sys.evaluate = [](const Vector& x, const Vector& u) {
    Vector next(1);
    next[0] = x[0] * x[0] * std::exp(-x[0]) + u[0];
    return next;
  };
  return sys;
}

/// theta'' = -sin(theta) + u with x = (theta, theta').
inline DynamicalSystem pendulum(const ParameterMap& overrides = {}) {
  require(overrides.empty(), "pendulum: system has no parameters");
  DynamicalSystem sys;
  sys.name = "pendulum";
  sys.n = 2;
  sys.p = 1;
  sys.kind = SystemKind::Continuous;
  sys.domain = Box::uniform(2, -3.0, 3.0);
  sys.evaluate = [](const Vector& x, const Vector& u) {
    Vector dx(2);
    dx[0] = x[1];
    dx[1] = -std::sin(x[0]) + u[0];
    return dx;
  };
  return sys;
}

/// Cart with pendulum, x = (cart position, cart velocity, angle, angular velocity).
/// The gravity constant keeps the negative sign convention (g = -10).
inline DynamicalSystem cartpole(const ParameterMap& overrides = {}) {
  ParameterMap params{{"m", 1.0}, {"M", 5.0}, {"L", 2.0}, {"g", -10.0}, {"delta", 1.0}};
  for (const auto& [key, value] : overrides) {
    require(params.count(key) == 1, "cartpole: unknown parameter '" + key + "'");
    params[key] = value;
  }
  const double m = params["m"], M = params["M"], L = params["L"], g = params["g"],
               delta = params["delta"];

  DynamicalSystem sys;
  sys.name = "cartpole";
  sys.n = 4;
  sys.p = 1;
  sys.kind = SystemKind::Continuous;
  sys.domain = Box::uniform(4, -3.0, 3.0);
  sys.parameters = params;
  sys.evaluate = [=](const Vector& x, const Vector& u) {
    const double s = std::sin(x[2]);
    const double c = std::cos(x[2]);
    const double coupling = m * L * x[3] * x[3] * s - delta * x[1];
    const double denom = m * L * L * (M + m * (1.0 - c * c));
    Vector dx(4);
    dx[0] = x[1];
    dx[1] = (-m * m * L * L * g * c * s + m * L * L * coupling + m * L * L * u[0]) / denom;
    dx[2] = x[3];
    dx[3] = ((m + M) * m * g * L * s - m * L * c * coupling + m * L * c * u[0]) / denom;
    return dx;
  };
  return sys;
}

/// Names accepted by builtin().
inline const std::array<std::string, 3>& builtin_names() {
  static const std::array<std::string, 3> names{"motivating", "pendulum", "cartpole"};
  return names;
}

}  // namespace systems

inline DynamicalSystem builtin(const std::string& name, const ParameterMap& overrides = {}) {
  if (name == "motivating") return systems::motivating(overrides);
  if (name == "pendulum") return systems::pendulum(overrides);
  if (name == "cartpole") return systems::cartpole(overrides);
  throw InvalidInput("unknown system '" + name + "'; valid names: motivating, pendulum, cartpole");
}

/// Plain continuous or discrete system from a closure (tests, custom plants).
inline DynamicalSystem make_system(std::string name, int n, int p, SystemKind kind,
                                   DynamicalSystem::Evaluator evaluate, Box domain = {}) {
  require(n >= 1 && p >= 1, "make_system: dimensions must be positive");
  DynamicalSystem sys;
  sys.name = std::move(name);
  sys.n = n;
  sys.p = p;
  sys.kind = kind;
  sys.evaluate = std::move(evaluate);
  sys.domain = domain.dim() == n ? std::move(domain) : Box::uniform(n, -1.0, 1.0);
  return sys;
}

/// Discrete-time LTI plant x+ = A x + B u.
inline DynamicalSystem linear_system(const Matrix& A, const Matrix& B, std::string name = "linear") {
  require(A.rows() == A.cols() && B.rows() == A.rows(), "linear_system: inconsistent A, B");
  return make_system(std::move(name), static_cast<int>(A.rows()), static_cast<int>(B.cols()),
                     SystemKind::Discrete,
                     [A, B](const Vector& x, const Vector& u) -> Vector { return A * x + B * u; });
}

}  // namespace kcl
