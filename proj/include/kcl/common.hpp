#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace kcl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Input that violates a documented precondition (dimensions, names, ranges).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation that is not defined for the given object kind.
class UnsupportedOperation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A computation produced a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An iterative solver stopped without meeting its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_residual)
      : std::runtime_error(what), last_residual_(last_residual) {}
  double last_residual() const noexcept { return last_residual_; }

 private:
  double last_residual_;
};

/// Every trajectory of a collection was excluded, or a training call got no data.
class EmptyDatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Serialized artifact does not match the expected schema or version.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Axis-aligned box [lower_i, upper_i] in R^d.
struct Box {
  Vector lower;
  Vector upper;

  Eigen::Index dim() const { return lower.size(); }
  double volume() const { return (upper - lower).prod(); }

  static Box uniform(Eigen::Index d, double lo, double hi) {
    return Box{Vector::Constant(d, lo), Vector::Constant(d, hi)};
  }
};

inline void require(bool ok, const std::string& message) {
  if (!ok) throw InvalidInput(message);
}

inline void require_dim(const Vector& v, Eigen::Index expected, std::string_view what) {
  if (v.size() != expected) {
    throw InvalidInput(std::string(what) + ": expected dimension " + std::to_string(expected) +
                       ", got " + std::to_string(v.size()));
  }
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

/// 64-bit FNV-1a, used for config and provenance hashes.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

/// Hash of the raw bytes of a matrix, including its shape.
inline std::uint64_t hash_matrix(const Matrix& m, std::uint64_t seed = 14695981039346656037ull) {
  std::uint64_t h = seed;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  const auto rows = static_cast<std::int64_t>(m.rows());
  const auto cols = static_cast<std::int64_t>(m.cols());
  mix(&rows, sizeof rows);
  mix(&cols, sizeof cols);
  mix(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  return h;
}

}  // namespace kcl
