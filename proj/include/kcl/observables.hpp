#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "kcl/common.hpp"

namespace kcl {

enum class Activation { Swish, Tanh, Identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Swish: return "swish";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& name) {
  if (name == "swish") return Activation::Swish;
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity" || name == "linear") return Activation::Identity;
  throw InvalidInput("unknown activation '" + name + "'; valid: swish, tanh, identity");
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::Swish: return z * sigmoid(z);
    case Activation::Tanh: return std::tanh(z);
    case Activation::Identity: return z;
  }
  return z;
}

inline double activate_grad(Activation a, double z) {
  switch (a) {
    case Activation::Swish: {
      const double s = sigmoid(z);
      return s + z * s * (1.0 - s);
    }
    case Activation::Tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

struct DenseLayer {
  Matrix kernel;  // out x in
  Vector bias;    // out
};

/// Fully connected network; the activation is also applied after the last
/// affine map unless final_activation is false.
struct FeedforwardNet {
  std::vector<DenseLayer> layers;
  Activation activation = Activation::Swish;
  bool final_activation = true;

  Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().kernel.cols(); }
  Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().kernel.rows(); }

  std::size_t parameter_count() const {
    std::size_t count = 0;
    for (const auto& l : layers) count += static_cast<std::size_t>(l.kernel.size() + l.bias.size());
    return count;
  }
};

/// Closed-form feature dictionaries.
struct Dictionary {
  enum class Kind { Identity, Model1, Model2, Monomials };
  Kind kind = Kind::Identity;
  // Monomials only: one exponent vector (length n) per feature.
  std::vector<std::vector<int>> exponents;

  static std::string name_of(Kind k) {
    switch (k) {
      case Kind::Identity: return "identity";
      case Kind::Model1: return "model1";
      case Kind::Model2: return "model2";
      case Kind::Monomials: return "monomials";
    }
    return "?";
  }
};

/// Activations cached by a batched forward pass.
struct ForwardCache {
  std::vector<Matrix> pre;   // pre-activations per layer
  std::vector<Matrix> post;  // layer inputs: post[0] = X, post[i] = output of layer i-1
  Matrix output;             // scaled network output
};

struct NetGradient {
  std::vector<Matrix> kernels;
  std::vector<Vector> biases;
  Matrix inputs;  // d/dX, n x batch

  static NetGradient zeros_like(const FeedforwardNet& net) {
    NetGradient g;
    for (const auto& l : net.layers) {
      g.kernels.push_back(Matrix::Zero(l.kernel.rows(), l.kernel.cols()));
      g.biases.push_back(Vector::Zero(l.bias.size()));
    }
    return g;
  }

  NetGradient& operator+=(const NetGradient& other) {
    for (std::size_t i = 0; i < kernels.size(); ++i) {
      kernels[i] += other.kernels[i];
      biases[i] += other.biases[i];
    }
    return *this;
  }
};

/// Feature map g~ : R^n -> R^N and the lifting g(x) = alpha [x; g~_1(x)],
/// where g~_1 is the unscaled feature map and alpha the output scale.
class ObservableMap {
 public:
  ObservableMap() = default;

  static ObservableMap from_network(Eigen::Index n, FeedforwardNet net, double scale = 1.0) {
    require(!net.layers.empty(), "ObservableMap: network needs at least one layer");
    require(net.input_dim() == n, "ObservableMap: first kernel must have n columns");
    for (std::size_t i = 0; i + 1 < net.layers.size(); ++i) {
      require(net.layers[i].kernel.rows() == net.layers[i + 1].kernel.cols(),
              "ObservableMap: layer dimensions do not chain");
    }
    for (const auto& l : net.layers) {
      require(l.bias.size() == l.kernel.rows(), "ObservableMap: bias length must match kernel rows");
    }
    ObservableMap map;
    map.n_ = n;
    map.N_ = net.output_dim();
    map.features_ = std::move(net);
    map.set_scale(scale);
    return map;
  }

  /// Glorot-uniform kernels, zero biases; hidden may be empty (single affine layer).
  static ObservableMap network(Eigen::Index n, const std::vector<int>& hidden, Eigen::Index N,
                               std::uint64_t seed, Activation activation = Activation::Swish,
                               bool final_activation = true) {
    require(n >= 1 && N >= 1, "ObservableMap::network: dimensions must be positive");
    std::mt19937_64 rng(seed);
    FeedforwardNet net;
    net.activation = activation;
    net.final_activation = final_activation;
    Eigen::Index fan_in = n;
    std::vector<Eigen::Index> widths(hidden.begin(), hidden.end());
    widths.push_back(N);
    for (Eigen::Index width : widths) {
      require(width >= 1, "ObservableMap::network: layer widths must be positive");
      const double s = std::sqrt(6.0 / static_cast<double>(fan_in + width));
      std::uniform_real_distribution<double> dist(-s, s);
      DenseLayer layer{Matrix(width, fan_in), Vector::Zero(width)};
      for (Eigen::Index r = 0; r < width; ++r)
        for (Eigen::Index c = 0; c < fan_in; ++c) layer.kernel(r, c) = dist(rng);
      net.layers.push_back(std::move(layer));
      fan_in = width;
    }
    return from_network(n, std::move(net));
  }

  static ObservableMap dictionary(Dictionary dict, Eigen::Index n, double scale = 1.0) {
    ObservableMap map;
    map.n_ = n;
    switch (dict.kind) {
      case Dictionary::Kind::Identity: map.N_ = 0; break;
      case Dictionary::Kind::Model1:
        require(n == 1, "dictionary model1 is defined for n = 1");
        map.N_ = 1;
        break;
      case Dictionary::Kind::Model2:
        require(n == 1, "dictionary model2 is defined for n = 1");
        map.N_ = 2;
        break;
      case Dictionary::Kind::Monomials:
        require(!dict.exponents.empty(), "monomial dictionary needs at least one exponent vector");
        for (const auto& e : dict.exponents) {
          require(static_cast<Eigen::Index>(e.size()) == n, "monomial exponent vector must have length n");
        }
        map.N_ = static_cast<Eigen::Index>(dict.exponents.size());
        break;
    }
    map.features_ = std::move(dict);
    map.set_scale(scale);
    return map;
  }

  /// identity | model1 | model2.
  static ObservableMap fixed_dictionary(const std::string& name, Eigen::Index n = 1) {
    if (name == "model1") return dictionary({Dictionary::Kind::Model1, {}}, n);
    if (name == "model2") return dictionary({Dictionary::Kind::Model2, {}}, n);
    if (name == "identity") return dictionary({Dictionary::Kind::Identity, {}}, n);
    throw InvalidInput("unknown dictionary '" + name + "'; valid: model1, model2, identity");
  }

  static ObservableMap monomials(Eigen::Index n, std::vector<std::vector<int>> exponents) {
    return dictionary({Dictionary::Kind::Monomials, std::move(exponents)}, n);
  }

  Eigen::Index n() const { return n_; }
  Eigen::Index N() const { return N_; }
  Eigen::Index lifted_dim() const { return n_ + N_; }
  double scale() const { return scale_; }

  void set_scale(double alpha) {
    require(alpha != 0.0 && std::isfinite(alpha), "ObservableMap: scale must be finite and nonzero");
    scale_ = alpha;
  }

  bool is_network() const { return std::holds_alternative<FeedforwardNet>(features_); }
  const FeedforwardNet& net() const { return std::get<FeedforwardNet>(features_); }
  FeedforwardNet& net() { return std::get<FeedforwardNet>(features_); }
  const Dictionary& dict() const { return std::get<Dictionary>(features_); }

  /// Scaled features alpha * g~_1 for each column of X (n x batch -> N x batch).
  Matrix forward_batch(const Matrix& X) const {
    require(X.rows() == n_, "forward: input has " + std::to_string(X.rows()) + " rows, expected " +
                                std::to_string(n_));
    if (is_network()) return forward_cached(X).output;
    return scale_ * dictionary_features(X);
  }

  Vector forward(const Vector& x) const {
    require_dim(x, n_, "forward input");
    return forward_batch(x);
  }

  Matrix lift_batch(const Matrix& X) const {
    Matrix out(lifted_dim(), X.cols());
    out.topRows(n_) = scale_ * X;
    if (N_ > 0) out.bottomRows(N_) = forward_batch(X);
    return out;
  }

  Vector lift(const Vector& x) const {
    require_dim(x, n_, "lift input");
    return lift_batch(x);
  }

  Vector decode(const Vector& lifted) const {
    require(lifted.size() >= n_, "decode: lifted vector shorter than n");
    return lifted.head(n_) / scale_;
  }

  Matrix decode_batch(const Matrix& lifted) const { return lifted.topRows(n_) / scale_; }

  /// Batched forward pass keeping the intermediates needed by backward_batch.
  ForwardCache forward_cached(const Matrix& X) const {
    const auto& nn = net();
    ForwardCache cache;
    cache.post.push_back(X);
    for (std::size_t i = 0; i < nn.layers.size(); ++i) {
      const auto& layer = nn.layers[i];
      Matrix z = layer.kernel * cache.post.back();
      z.colwise() += layer.bias;
      const bool last = i + 1 == nn.layers.size();
      Matrix a = (last && !nn.final_activation)
                     ? z
                     : Matrix(z.unaryExpr([&](double v) { return activate(nn.activation, v); }));
      cache.pre.push_back(std::move(z));
      if (last) {
        cache.output = scale_ * a;
      } else {
        cache.post.push_back(std::move(a));
      }
    }
    return cache;
  }

  /// Gradients of sum_j upstream(:,j)^T forward(X(:,j)) w.r.t. weights and inputs.
  NetGradient backward_batch(const ForwardCache& cache, const Matrix& upstream) const {
    const auto& nn = net();
    require(upstream.rows() == N_ && upstream.cols() == cache.post.front().cols(),
            "backward: upstream has wrong shape");
    NetGradient grad = NetGradient::zeros_like(nn);
    Matrix delta = scale_ * upstream;
    for (std::size_t i = nn.layers.size(); i-- > 0;) {
      const bool last = i + 1 == nn.layers.size();
      if (!last || nn.final_activation) {
        delta = delta.cwiseProduct(
            cache.pre[i].unaryExpr([&](double v) { return activate_grad(nn.activation, v); }));
      }
      grad.kernels[i] = delta * cache.post[i].transpose();
      grad.biases[i] = delta.rowwise().sum();
      delta = nn.layers[i].kernel.transpose() * delta;
    }
    grad.inputs = std::move(delta);
    return grad;
  }

  NetGradient backward(const Vector& x, const Vector& upstream) const {
    require_dim(x, n_, "backward input");
    require_dim(upstream, N_, "backward upstream");
    return backward_batch(forward_cached(x), upstream);
  }

 private:
  Matrix dictionary_features(const Matrix& X) const {
    const auto& d = dict();
    Matrix out(N_, X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      switch (d.kind) {
        case Dictionary::Kind::Identity: break;
        case Dictionary::Kind::Model1: {
          const double x = X(0, j);
          out(0, j) = x * x * std::exp(-x);
          break;
        }
        case Dictionary::Kind::Model2: {
          const double x = X(0, j);
          out(0, j) = x * x * std::exp(-x);
          out(1, j) = x * x;
          break;
        }
        case Dictionary::Kind::Monomials:
          for (Eigen::Index f = 0; f < N_; ++f) {
            double v = 1.0;
            for (Eigen::Index i = 0; i < n_; ++i) {
              const int e = d.exponents[static_cast<std::size_t>(f)][static_cast<std::size_t>(i)];
              for (int k = 0; k < e; ++k) v *= X(i, j);
            }
            out(f, j) = v;
          }
          break;
      }
    }
    return out;
  }

  Eigen::Index n_ = 0;
  Eigen::Index N_ = 0;
  double scale_ = 1.0;
  std::variant<Dictionary, FeedforwardNet> features_;
};

}  // namespace kcl
