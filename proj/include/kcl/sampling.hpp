#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kcl/control.hpp"
#include "kcl/dynamics.hpp"
#include "kcl/model.hpp"

namespace kcl {

enum class SignalKind { Zero, Uniform, Cosine, Feedback };

inline std::string to_string(SignalKind k) {
  switch (k) {
    case SignalKind::Zero: return "zero";
    case SignalKind::Uniform: return "uniform";
    case SignalKind::Cosine: return "cosine";
    case SignalKind::Feedback: return "feedback";
  }
  return "?";
}

/// splitmix64 finalizer; derives independent per-trajectory seeds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct InputSignal {
  SignalKind kind = SignalKind::Zero;
  double lower = -1.0;
  double upper = 1.0;
  std::uint64_t seed = 0;
  double omega = 0.0;  // rad per time unit
  double dt = 0.1;

  static InputSignal zero() { return {}; }
  static InputSignal uniform(double lower, double upper, std::uint64_t seed) {
    InputSignal s;
    s.kind = SignalKind::Uniform;
    s.lower = lower;
    s.upper = upper;
    s.seed = seed;
    return s;
  }
  static InputSignal cosine(double omega, double dt) {
    InputSignal s;
    s.kind = SignalKind::Cosine;
    s.omega = omega;
    s.dt = dt;
    return s;
  }
  static InputSignal feedback() {
    InputSignal s;
    s.kind = SignalKind::Feedback;
    return s;
  }
};

/// u_0 .. u_{steps-1}, each of dimension p.
inline std::vector<Vector> generate_inputs(const InputSignal& signal, int steps, int p = 1) {
  require(steps >= 1, "generate_inputs: steps must be >= 1");
  require(p >= 1, "generate_inputs: p must be >= 1");
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(steps));
  switch (signal.kind) {
    case SignalKind::Zero:
      for (int k = 0; k < steps; ++k) out.push_back(Vector::Zero(p));
      break;
    case SignalKind::Uniform: {
      require(signal.lower < signal.upper, "generate_inputs: uniform bounds need lower < upper");
      std::mt19937_64 rng(signal.seed);
      std::uniform_real_distribution<double> dist(signal.lower, signal.upper);
      for (int k = 0; k < steps; ++k) {
        Vector u(p);
        for (int i = 0; i < p; ++i) u[i] = dist(rng);
        out.push_back(std::move(u));
      }
      break;
    }
    case SignalKind::Cosine:
      for (int k = 0; k < steps; ++k) out.push_back(Vector::Constant(p, std::cos(signal.omega * k * signal.dt)));
      break;
    case SignalKind::Feedback:
      throw UnsupportedOperation("generate_inputs: feedback inputs only arise in closed-loop collection");
  }
  return out;
}

struct Provenance {
  SignalKind kind = SignalKind::Zero;
  std::uint64_t seed = 0;
  double omega = 0.0;

  std::string label() const {
    std::ostringstream os;
    os << to_string(kind);
    if (kind == SignalKind::Uniform) os << ":seed=" << seed;
    if (kind == SignalKind::Cosine) os << ":omega=" << omega;
    return os.str();
  }
};

struct Triplet {
  Vector x;
  Vector u;
  Vector y;
};

struct TrajectoryRecord {
  std::size_t begin = 0;  // triplet index range [begin, end)
  std::size_t end = 0;
  int group = 0;
  Provenance provenance;

  std::size_t length() const { return end - begin; }
};

struct ExclusionReport {
  std::size_t trajectory = 0;  // index in the collection order
  std::string reason;
};

/// Ordered triplets (x_k, u_k, y_k = F(x_k, u_k)) grouped into trajectories.
class TrajectoryDataset {
 public:
  TrajectoryDataset() = default;
  TrajectoryDataset(int n, int p) : n_(n), p_(p) { require(n >= 1 && p >= 1, "dataset: bad dimensions"); }

  int n() const { return n_; }
  int p() const { return p_; }
  std::size_t size() const { return triplets_.size(); }
  bool empty() const { return triplets_.empty(); }
  std::size_t trajectory_count() const { return trajectories_.size(); }
  const std::vector<Triplet>& triplets() const { return triplets_; }
  const std::vector<TrajectoryRecord>& trajectories() const { return trajectories_; }
  const std::vector<ExclusionReport>& excluded() const { return excluded_; }

  /// Raw rollout x_0..x_T with inputs u_0..u_{T-1}; y_k = x_{k+1} by construction.
  void add_rollout(const std::vector<Vector>& states, const std::vector<Vector>& inputs, int group,
                   const Provenance& provenance) {
    require(!inputs.empty(), "add_rollout: trajectory needs at least one step");
    require(states.size() == inputs.size() + 1, "add_rollout: need one more state than inputs");
    std::vector<Triplet> ts;
    ts.reserve(inputs.size());
    for (std::size_t k = 0; k < inputs.size(); ++k) ts.push_back({states[k], inputs[k], states[k + 1]});
    append(std::move(ts), group, provenance);
  }

  /// Triplets of one trajectory; rejects data where y_k differs from x_{k+1}.
  void add_triplets(std::vector<Triplet> ts, int group, const Provenance& provenance, double tol = 0.0) {
    require(!ts.empty(), "add_triplets: trajectory needs at least one triplet");
    for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
      const double gap = (ts[k].y - ts[k + 1].x).cwiseAbs().maxCoeff();
      require(gap <= tol, "add_triplets: y_" + std::to_string(k) + " != x_" + std::to_string(k + 1) +
                              " (gap " + std::to_string(gap) + ")");
    }
    append(std::move(ts), group, provenance);
  }

  void set_group(std::size_t trajectory, int group) { trajectories_.at(trajectory).group = group; }
  void add_exclusion(ExclusionReport report) { excluded_.push_back(std::move(report)); }

  /// States x_0..x_T of trajectory i.
  std::vector<Vector> trajectory_states(std::size_t i) const {
    const auto& rec = trajectories_.at(i);
    std::vector<Vector> out;
    for (std::size_t k = rec.begin; k < rec.end; ++k) out.push_back(triplets_[k].x);
    out.push_back(triplets_[rec.end - 1].y);
    return out;
  }

  std::vector<Vector> trajectory_inputs(std::size_t i) const {
    const auto& rec = trajectories_.at(i);
    std::vector<Vector> out;
    for (std::size_t k = rec.begin; k < rec.end; ++k) out.push_back(triplets_[k].u);
    return out;
  }

  Matrix X() const { return gather([](const Triplet& t) -> const Vector& { return t.x; }, n_); }
  Matrix U() const { return gather([](const Triplet& t) -> const Vector& { return t.u; }, p_); }
  Matrix Y() const { return gather([](const Triplet& t) -> const Vector& { return t.y; }, n_); }

  std::size_t count_with(SignalKind kind) const {
    std::size_t c = 0;
    for (const auto& r : trajectories_) c += r.provenance.kind == kind ? r.length() : 0;
    return c;
  }

 private:
  void append(std::vector<Triplet> ts, int group, const Provenance& provenance) {
    for (const auto& t : ts) {
      require_dim(t.x, n_, "triplet x");
      require_dim(t.u, p_, "triplet u");
      require_dim(t.y, n_, "triplet y");
    }
    TrajectoryRecord rec;
    rec.begin = triplets_.size();
    for (auto& t : ts) triplets_.push_back(std::move(t));
    rec.end = triplets_.size();
    rec.group = group;
    rec.provenance = provenance;
    trajectories_.push_back(rec);
  }

  template <class Field>
  Matrix gather(Field field, int rows) const {
    Matrix out(rows, static_cast<Eigen::Index>(triplets_.size()));
    for (std::size_t j = 0; j < triplets_.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = field(triplets_[j]);
    return out;
  }

  int n_ = 0;
  int p_ = 0;
  std::vector<Triplet> triplets_;
  std::vector<TrajectoryRecord> trajectories_;
  std::vector<ExclusionReport> excluded_;
};

/// Uniform initial-condition sampler over a box; draws are sequential in one stream.
struct BoxSampler {
  Box box;
  std::uint64_t seed = 0;

  std::vector<Vector> draw(std::size_t count) const {
    require(box.dim() >= 1, "BoxSampler: empty box");
    std::mt19937_64 rng(seed);
    std::vector<Vector> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      Vector x(box.dim());
      for (Eigen::Index d = 0; d < box.dim(); ++d) {
        std::uniform_real_distribution<double> dist(box.lower[d], box.upper[d]);
        x[d] = dist(rng);
      }
      out.push_back(std::move(x));
    }
    return out;
  }
};

inline InputSignal trajectory_signal(const InputSignal& signal, std::size_t index) {
  InputSignal s = signal;
  if (s.kind == SignalKind::Uniform) s.seed = derive_seed(signal.seed, index);
  return s;
}

inline Provenance provenance_of(const InputSignal& s) { return Provenance{s.kind, s.seed, s.omega}; }

/// Open-loop rollouts from sampled x0. Trajectories that hit a non-finite state
/// are excluded and reported.
inline TrajectoryDataset collect_trajectories(const DynamicalSystem& sys, const BoxSampler& x0_sampler,
                                              const InputSignal& signal, int steps,
                                              const IntegrationConfig& cfg, int count) {
  require(count >= 1, "collect_trajectories: count must be >= 1");
  require(steps >= 1, "collect_trajectories: steps must be >= 1");
  require(x0_sampler.box.dim() == sys.n, "collect_trajectories: sampler box must have dimension n");
  TrajectoryDataset data(sys.n, sys.p);
  const auto x0s = x0_sampler.draw(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < x0s.size(); ++i) {
    const InputSignal s = trajectory_signal(signal, i);
    const auto inputs = generate_inputs(s, steps, sys.p);
    try {
      const auto states = simulate_open_loop(sys, x0s[i], inputs, cfg);
      data.add_rollout(states, inputs, 0, provenance_of(s));
    } catch (const NumericError& e) {
      data.add_exclusion({i, e.what()});
    }
  }
  if (data.empty()) {
    throw EmptyDatasetError("collect_trajectories: all " + std::to_string(count) +
                            " trajectories were excluded");
  }
  return data;
}

/// M independent one-step samples with x ~ U(x_box), u ~ U(u_box).
inline TrajectoryDataset sample_pairs(const DynamicalSystem& sys, const Box& x_box, const Box& u_box,
                                      std::size_t count, std::uint64_t seed,
                                      const IntegrationConfig& cfg = {}) {
  require(x_box.dim() == sys.n && u_box.dim() == sys.p, "sample_pairs: box dimensions");
  require(count >= 1, "sample_pairs: count must be >= 1");
  std::mt19937_64 rng(seed);
  TrajectoryDataset data(sys.n, sys.p);
  Provenance prov{SignalKind::Uniform, seed, 0.0};
  auto draw = [&rng](const Box& b) {
    Vector v(b.dim());
    for (Eigen::Index d = 0; d < b.dim(); ++d) {
      std::uniform_real_distribution<double> dist(b.lower[d], b.upper[d]);
      v[d] = dist(rng);
    }
    return v;
  };
  for (std::size_t i = 0; i < count; ++i) {
    Vector x = draw(x_box);
    Vector u = draw(u_box);
    try {
      Vector y = discrete_step(sys, x, u, cfg);
      data.add_rollout({x, y}, {u}, 0, prov);
    } catch (const NumericError& e) {
      data.add_exclusion({i, e.what()});
    }
  }
  if (data.empty()) throw EmptyDatasetError("sample_pairs: every sample was non-finite");
  return data;
}

/// Relabels trajectory j into group j % group_count and re-simulates it from
/// its stored x0 under u_k = cos(omega_group k dt).
inline TrajectoryDataset split_into_groups(const TrajectoryDataset& data, const DynamicalSystem& sys,
                                           const std::optional<IntegrationConfig>& cfg, int group_count,
                                           const std::vector<double>& frequencies) {
  require(group_count >= 1, "split_into_groups: group_count must be >= 1");
  require(static_cast<int>(frequencies.size()) == group_count,
          "split_into_groups: need one frequency per group");
  require(data.n() == sys.n && data.p() == sys.p, "split_into_groups: dataset/system mismatch");
  if (sys.kind == SystemKind::Continuous && !cfg) {
    throw InvalidInput("split_into_groups: continuous system '" + sys.name + "' needs an IntegrationConfig");
  }
  const IntegrationConfig integration = cfg.value_or(IntegrationConfig{1.0, 1});
  TrajectoryDataset out(sys.n, sys.p);
  for (std::size_t j = 0; j < data.trajectory_count(); ++j) {
    const int group = static_cast<int>(j % static_cast<std::size_t>(group_count));
    const auto& rec = data.trajectories()[j];
    const InputSignal s = InputSignal::cosine(frequencies[static_cast<std::size_t>(group)], integration.dt);
    const auto inputs = generate_inputs(s, static_cast<int>(rec.length()), sys.p);
    try {
      const auto states = simulate_open_loop(sys, data.triplets()[rec.begin].x, inputs, integration);
      out.add_rollout(states, inputs, group, provenance_of(s));
    } catch (const NumericError& e) {
      out.add_exclusion({j, e.what()});
    }
  }
  if (out.empty()) throw EmptyDatasetError("split_into_groups: all trajectories were excluded");
  return out;
}

/// Rollouts of the true plant under u_k = K g(x_k). A run stops at the first
/// successor that leaves the blow-up radius; the finite prefix is kept.
inline TrajectoryDataset collect_closed_loop(const DynamicalSystem& sys, const KoopmanModel& model,
                                             const FeedbackGain& gain, const BoxSampler& x0_sampler,
                                             int steps, const IntegrationConfig& cfg, int count,
                                             double blowup_radius = 1e6) {
  require(count >= 1 && steps >= 1, "collect_closed_loop: count and steps must be >= 1");
  require(gain.K.rows() == sys.p && gain.K.cols() == model.lifted_dim(),
          "collect_closed_loop: gain must be p x (n+N)");
  require(x0_sampler.box.dim() == sys.n, "collect_closed_loop: sampler box must have dimension n");
  TrajectoryDataset data(sys.n, sys.p);
  const auto x0s = x0_sampler.draw(static_cast<std::size_t>(count));
  const Provenance prov{SignalKind::Feedback, x0_sampler.seed, 0.0};
  for (std::size_t i = 0; i < x0s.size(); ++i) {
    std::vector<Vector> states{x0s[i]};
    std::vector<Vector> inputs;
    for (int k = 0; k < steps; ++k) {
      const Vector u = gain.K * model.lift(states.back());
      Vector next;
      try {
        next = discrete_step(sys, states.back(), u, cfg);
      } catch (const NumericError&) {
        break;
      }
      if (!next.allFinite() || next.norm() > blowup_radius) break;
      inputs.push_back(u);
      states.push_back(std::move(next));
    }
    if (inputs.empty()) {
      data.add_exclusion({i, "diverged on the first step"});
      continue;
    }
    data.add_rollout(states, inputs, 0, prov);
  }
  if (data.empty()) throw EmptyDatasetError("collect_closed_loop: every trajectory diverged immediately");
  return data;
}

/// Concatenation keeping trajectory boundaries, groups and provenance.
inline TrajectoryDataset merge(const TrajectoryDataset& a, const TrajectoryDataset& b) {
  if (a.empty() && a.trajectory_count() == 0 && a.n() == 0) return b;
  if (b.empty() && b.trajectory_count() == 0 && b.n() == 0) return a;
  require(a.n() == b.n() && a.p() == b.p(), "merge: datasets have different dimensions");
  TrajectoryDataset out(a.n(), a.p());
  for (const auto* src : {&a, &b}) {
    for (const auto& rec : src->trajectories()) {
      std::vector<Triplet> ts(src->triplets().begin() + static_cast<std::ptrdiff_t>(rec.begin),
                              src->triplets().begin() + static_cast<std::ptrdiff_t>(rec.end));
      out.add_triplets(std::move(ts), rec.group, rec.provenance, 0.0);
    }
    for (const auto& ex : src->excluded()) out.add_exclusion(ex);
  }
  return out;
}

/// Keeps all of `fresh` and leading whole trajectories of `initial` so that
/// fresh data makes up roughly `fresh_fraction` of the triplets.
inline TrajectoryDataset mix(const TrajectoryDataset& initial, const TrajectoryDataset& fresh,
                             double fresh_fraction) {
  require(fresh_fraction > 0.0 && fresh_fraction <= 1.0, "mix: fresh_fraction must lie in (0, 1]");
  const double wanted = static_cast<double>(fresh.size()) * (1.0 - fresh_fraction) / fresh_fraction;
  TrajectoryDataset kept(initial.n(), initial.p());
  std::size_t taken = 0;
  for (const auto& rec : initial.trajectories()) {
    if (static_cast<double>(taken) >= wanted) break;
    std::vector<Triplet> ts(initial.triplets().begin() + static_cast<std::ptrdiff_t>(rec.begin),
                            initial.triplets().begin() + static_cast<std::ptrdiff_t>(rec.end));
    kept.add_triplets(std::move(ts), rec.group, rec.provenance);
    taken += rec.length();
  }
  return merge(kept, fresh);
}

}  // namespace kcl
