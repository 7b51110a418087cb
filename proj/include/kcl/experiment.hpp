#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kcl/analysis.hpp"
#include "kcl/config.hpp"
#include "kcl/control.hpp"
#include "kcl/dynamics.hpp"
#include "kcl/edmd.hpp"
#include "kcl/io.hpp"
#include "kcl/sampling.hpp"
#include "kcl/training.hpp"

namespace kcl {

struct SamplingSpec {
  std::string mode = "trajectories";  // trajectories | pairs
  std::string signal = "cosine";      // cosine | uniform | zero
  int trajectories = 50;
  int steps = 50;
  std::size_t samples = 10000;  // pairs mode
  Box x_box;
  Box u_box;
  int groups = 6;
  double omega_step = 20.0;
  std::uint64_t seed = 0;
};

/// `network`, or a fixed dictionary (identity, model1, model2) fitted by EDMD,
/// optionally with an output scale written `name@alpha`.
struct ModelSpec {
  std::string label;
  std::string kind;
  double scale = 1.0;

  bool trained() const { return kind == "network"; }
  std::string directory() const {
    std::string d = label;
    for (auto& c : d) {
      if (c == '@') c = '_';
    }
    return d;
  }
};

struct RefineSpec {
  bool enabled = false;
  RefinementConfig config;
  int trajectories = 50;
  int steps = 50;
  double blowup_radius = 20.0;
  bool fresh_data = true;
  Box x_box;  // initial states of the closed-loop runs
  std::uint64_t seed = 0;
};

struct ControlSpec {
  bool enabled = true;
  Vector state_weights;
  Matrix R;
  Vector x0;
  int steps = 50;
  ClosedLoopOptions options;
};

struct HeatmapSpec {
  bool enabled = false;
  ErrorGrid grid;
};

struct BasinSpec {
  bool enabled = false;
  BasinGrid grid;
  int horizon = 300;
};

struct BoundSpec {
  bool enabled = false;
  SamplingMeasure measure;
};

struct PredictSpec {
  bool enabled = false;
  int count = 20;
  int steps = 50;
  Box x_box;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  std::string name;
  std::string system;
  ParameterMap parameters;
  IntegrationConfig integration;
  std::uint64_t seed = 0;
  SamplingSpec sampling;
  std::vector<ModelSpec> models;
  Architecture architecture;
  TrainingConfig training;
  RefineSpec refinement;
  ControlSpec control;
  HeatmapSpec heatmap;
  BasinSpec basin;
  BoundSpec bound;
  PredictSpec predict;
  ConfigTree tree;

  std::string hash() const { return tree.hash(); }
  DynamicalSystem make_system() const { return builtin(system, parameters); }
  LQRWeights weights(Eigen::Index N) const { return LQRWeights::on_states(control.state_weights, N, control.R); }

  /// Model labels in pipeline order, refined variants included.
  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (const auto& m : models) {
      out.push_back(m.directory());
      if (m.trained() && refinement.enabled) out.push_back(m.directory() + "_refined");
    }
    return out;
  }

  static ExperimentConfig from_tree(const ConfigTree& tree);
};

namespace detail {

inline Box read_box(ConfigReader& r, const std::string& prefix, const Box& fallback, Eigen::Index dim) {
  Box b{r.vector(prefix + "_lower", fallback.lower, dim), r.vector(prefix + "_upper", fallback.upper, dim)};
  if (b.lower.size() == b.upper.size()) {
    for (Eigen::Index i = 0; i < b.lower.size(); ++i) {
      if (!(b.lower[i] < b.upper[i])) {
        r.problem("'" + prefix + "_lower' must be below '" + prefix + "_upper' in every coordinate");
        break;
      }
    }
  }
  return b;
}

template <std::size_t K>
std::array<int, K> read_ints(ConfigReader& r, const std::string& key, std::array<int, K> fallback) {
  if (!r.has(key)) {
    r.text(key, {});
    return fallback;
  }
  const auto values = r.numbers(key, {});
  if (values.size() != K) {
    r.problem("'" + key + "': expected " + std::to_string(K) + " values");
    return fallback;
  }
  std::array<int, K> out{};
  for (std::size_t i = 0; i < K; ++i) {
    if (values[i] != std::floor(values[i])) r.problem("'" + key + "': expected integers");
    out[i] = static_cast<int>(values[i]);
  }
  return out;
}

template <std::size_t K>
std::array<double, K> read_doubles(ConfigReader& r, const std::string& key, std::array<double, K> fallback) {
  if (!r.has(key)) {
    r.text(key, {});
    return fallback;
  }
  const auto values = r.numbers(key, {});
  if (values.size() != K) {
    r.problem("'" + key + "': expected " + std::to_string(K) + " values");
    return fallback;
  }
  std::array<double, K> out{};
  std::copy(values.begin(), values.end(), out.begin());
  return out;
}

inline std::uint64_t sub_seed(ConfigReader& r, const std::string& key, std::uint64_t master, std::uint64_t stream) {
  const long long v = r.integer(key, -1);
  return v >= 0 ? static_cast<std::uint64_t>(v) : derive_seed(master, stream);
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_tree(const ConfigTree& tree) {
  ExperimentConfig c;
  c.tree = tree;
  ConfigReader r(tree);

  c.system = r.required_text("system");
  c.name = r.text("name", c.system);
  const long long seed = r.required_integer("seed");
  if (seed < 0) r.problem("'seed' must be non-negative");
  c.seed = static_cast<std::uint64_t>(seed);

  const std::string prefix = "system.";
  for (const auto& [key, value] : tree.values()) {
    if (key.rfind(prefix, 0) == 0) c.parameters[key.substr(prefix.size())] = r.number(key, 0.0);
  }
  DynamicalSystem sys;
  bool have_system = false;
  if (!c.system.empty()) {
    try {
      sys = c.make_system();
      have_system = true;
    } catch (const InvalidInput& e) {
      r.problem(e.what());
    }
  }
  const Eigen::Index n = have_system ? sys.n : 1;
  const Eigen::Index p = have_system ? sys.p : 1;

  c.integration.dt = r.number("integration.dt", 0.1);
  c.integration.substeps = static_cast<int>(r.integer("integration.substeps", 10));
  if (!(c.integration.dt > 0.0) || c.integration.substeps < 1) {
    r.problem("'integration.dt' must be positive and 'integration.substeps' >= 1");
  }

  auto& s = c.sampling;
  s.mode = r.text("sampling.mode", "trajectories");
  if (s.mode != "trajectories" && s.mode != "pairs") r.problem("'sampling.mode' must be trajectories or pairs");
  s.signal = r.text("sampling.signal", "cosine");
  if (s.signal != "cosine" && s.signal != "uniform" && s.signal != "zero") {
    r.problem("'sampling.signal' must be cosine, uniform or zero");
  }
  s.trajectories = static_cast<int>(r.integer("sampling.trajectories", 50));
  s.steps = static_cast<int>(r.integer("sampling.steps", 50));
  s.samples = static_cast<std::size_t>(std::max<long long>(0, r.integer("sampling.samples", 10000)));
  if (s.trajectories < 1 || s.steps < 1 || s.samples < 1) r.problem("sampling: counts must be >= 1");
  s.x_box = detail::read_box(r, "sampling.x", have_system ? sys.domain : Box::uniform(n, -1, 1), n);
  s.u_box = detail::read_box(r, "sampling.u", Box::uniform(p, -1.0, 1.0), p);
  s.groups = static_cast<int>(r.integer("sampling.groups", 6));
  s.omega_step = r.number("sampling.omega_step", 20.0);
  if (s.groups < 1) r.problem("'sampling.groups' must be >= 1");
  s.seed = detail::sub_seed(r, "sampling.seed", c.seed, 1);

  for (const auto& entry : r.list("models", {"network"})) {
    ModelSpec m;
    m.label = entry;
    const auto at = entry.find('@');
    m.kind = entry.substr(0, at);
    if (at != std::string::npos) {
      try {
        m.scale = std::stod(entry.substr(at + 1));
      } catch (const std::exception&) {
        r.problem("model '" + entry + "': scale after '@' must be a number");
      }
      if (m.scale == 0.0) r.problem("model '" + entry + "': scale must be nonzero");
    }
    if (m.kind != "network" && m.kind != "identity" && m.kind != "model1" && m.kind != "model2") {
      r.problem("model '" + entry + "': unknown kind (valid: network, identity, model1, model2)");
    } else if ((m.kind == "model1" || m.kind == "model2") && n != 1) {
      r.problem("model '" + entry + "': dictionary requires a scalar state");
    }
    c.models.push_back(m);
  }
  if (c.models.empty()) r.problem("'models' must name at least one model");

  auto& a = c.architecture;
  a.hidden.clear();
  for (double h : r.numbers("architecture.hidden", {10.0})) a.hidden.push_back(static_cast<int>(h));
  a.N = r.integer("architecture.N", 1);
  try {
    a.activation = activation_from_string(r.text("architecture.activation", "swish"));
  } catch (const InvalidInput& e) {
    r.problem(e.what());
  }
  a.final_activation = r.flag("architecture.final_activation", true);
  if (a.N < 1) r.problem("'architecture.N' must be >= 1");
  for (int h : a.hidden) {
    if (h < 1) r.problem("'architecture.hidden' widths must be >= 1");
  }

  auto& t = c.training;
  t.lambda1 = r.number("training.lambda1", t.lambda1);
  t.lambda2 = r.number("training.lambda2", t.lambda2);
  t.learning_rate = r.number("training.learning_rate", t.learning_rate);
  t.epochs = static_cast<int>(r.integer("training.epochs", t.epochs));
  t.batch_size = static_cast<int>(r.integer("training.batch_size", t.batch_size));
  t.beta1 = r.number("training.beta1", t.beta1);
  t.beta2 = r.number("training.beta2", t.beta2);
  t.epsilon = r.number("training.epsilon", t.epsilon);
  t.least_squares_init = r.flag("training.least_squares_init", t.least_squares_init);
  t.least_squares_polish = r.flag("training.least_squares_polish", t.least_squares_polish);
  t.seed = detail::sub_seed(r, "training.seed", c.seed, 2);
  try {
    t.validate();
  } catch (const InvalidInput& e) {
    r.problem(e.what());
  }

  auto& rf = c.refinement;
  rf.enabled = r.flag("refinement.enabled", false);
  rf.config.eps_A = r.number("refinement.eps_A", rf.config.eps_A);
  rf.config.eps_B = r.number("refinement.eps_B", rf.config.eps_B);
  rf.config.max_iterations = static_cast<int>(r.integer("refinement.max_iterations", rf.config.max_iterations));
  rf.config.tolerance = r.number("refinement.tolerance", rf.config.tolerance);
  rf.config.closed_loop_fraction = r.number("refinement.closed_loop_fraction", rf.config.closed_loop_fraction);
  rf.trajectories = static_cast<int>(r.integer("refinement.trajectories", rf.trajectories));
  rf.steps = static_cast<int>(r.integer("refinement.steps", rf.steps));
  rf.blowup_radius = r.number("refinement.blowup_radius", rf.blowup_radius);
  rf.fresh_data = r.flag("refinement.fresh_data", rf.fresh_data);
  rf.x_box = detail::read_box(r, "refinement.x", s.x_box, n);
  rf.seed = detail::sub_seed(r, "refinement.seed", c.seed, 3);
  try {
    rf.config.validate();
  } catch (const InvalidInput& e) {
    r.problem(e.what());
  }
  if (rf.trajectories < 1 || rf.steps < 1) r.problem("refinement: trajectories and steps must be >= 1");
  if (rf.enabled && s.mode == "pairs") r.problem("refinement needs trajectory sampling, not pairs");

  auto& ct = c.control;
  ct.enabled = r.flag("control.enabled", true);
  ct.state_weights = r.vector("control.state_weights", Vector::Ones(n), n);
  const Vector rdiag = r.vector("control.R", Vector::Ones(p), p);
  ct.R = rdiag.asDiagonal();
  ct.x0 = r.vector("control.x0", Vector::Zero(n), n);
  ct.steps = static_cast<int>(r.integer("control.steps", 50));
  ct.options.tol = r.number("control.tol", ct.options.tol);
  ct.options.tail = static_cast<int>(r.integer("control.tail", ct.options.tail));
  ct.options.blowup_radius = r.number("control.blowup_radius", ct.options.blowup_radius);
  if ((ct.state_weights.array() < 0.0).any()) r.problem("'control.state_weights' must be >= 0");
  if ((rdiag.array() <= 0.0).any()) r.problem("'control.R' must be positive");
  if (ct.steps < 0) r.problem("'control.steps' must be >= 0");

  auto& hm = c.heatmap;
  hm.enabled = r.flag("heatmap.enabled", false);
  hm.grid.axes = detail::read_ints<2>(r, "heatmap.axes", {0, static_cast<int>(n)});
  hm.grid.lower = detail::read_doubles<2>(r, "heatmap.lower", hm.grid.lower);
  hm.grid.upper = detail::read_doubles<2>(r, "heatmap.upper", hm.grid.upper);
  hm.grid.counts = detail::read_ints<2>(r, "heatmap.counts", hm.grid.counts);
  hm.grid.base = r.vector("heatmap.base", Vector::Zero(n + p), n + p);
  hm.grid.state_block = r.flag("heatmap.state_block", false);
  for (int ax : hm.grid.axes) {
    if (ax < 0 || ax >= n + p) r.problem("'heatmap.axes' must index [x; u]");
  }

  auto& bs = c.basin;
  bs.enabled = r.flag("basin.enabled", false);
  bs.grid.axes = detail::read_ints<2>(r, "basin.axes", {0, n > 1 ? 1 : 0});
  bs.grid.lower = detail::read_doubles<2>(r, "basin.lower", {-1.0, -1.0});
  bs.grid.upper = detail::read_doubles<2>(r, "basin.upper", {1.0, 1.0});
  bs.grid.counts = detail::read_ints<2>(r, "basin.counts", {11, 11});
  bs.grid.base = r.vector("basin.base", Vector::Zero(n), n);
  bs.horizon = static_cast<int>(r.integer("basin.horizon", 300));
  for (int ax : bs.grid.axes) {
    if (ax < 0 || ax >= n) r.problem("'basin.axes' must index x");
  }
  if (bs.enabled && !ct.enabled) r.problem("basin estimation needs control.enabled");

  auto& bd = c.bound;
  bd.enabled = r.flag("bound.enabled", false);
  bd.measure.x_box = detail::read_box(r, "bound.x", s.x_box, n);
  bd.measure.u_box = detail::read_box(r, "bound.u", s.u_box, p);
  bd.measure.samples = static_cast<std::size_t>(std::max<long long>(2, r.integer("bound.samples", 10000)));
  bd.measure.seed = detail::sub_seed(r, "bound.seed", c.seed, 6);

  auto& pr = c.predict;
  pr.enabled = r.flag("predict.enabled", false);
  pr.count = static_cast<int>(r.integer("predict.count", 20));
  pr.steps = static_cast<int>(r.integer("predict.steps", 50));
  pr.x_box = detail::read_box(r, "predict.x", s.x_box, n);
  pr.seed = detail::sub_seed(r, "predict.seed", c.seed, 5);
  if (pr.count < 1 || pr.steps < 0) r.problem("predict: count must be >= 1 and steps >= 0");

  for (const auto& key : r.unknown_keys({"system."})) r.problem("unknown key '" + key + "'");
  if (!r.problems().empty()) throw ConfigError(r.problems());
  return c;
}

// ---------------------------------------------------------------------------
// Presets

inline const std::map<std::string, std::string>& preset_texts() {
  static const std::map<std::string, std::string> presets{
      {"motivating", R"(# x+ = x^2 exp(-x) + u with the two fixed dictionaries
name = motivating
system = motivating
seed = 1
sampling.mode = pairs
sampling.samples = 10000
sampling.x_lower = -4
sampling.x_upper = 4
sampling.u_lower = -2
sampling.u_upper = 2
models = model1, model2, model2@10, model2@50
control.state_weights = 1
control.R = 1
control.x0 = -3.4298
control.steps = 50
heatmap.enabled = true
heatmap.axes = 0, 1
heatmap.lower = -4, -2
heatmap.upper = 4, 2
heatmap.counts = 81, 41
bound.enabled = true
bound.samples = 10000
)"},
      {"pendulum", R"(# simple pendulum, Step 1 only, cosine input groups
name = pendulum
system = pendulum
seed = 1
sampling.signal = cosine
sampling.trajectories = 50
sampling.steps = 50
sampling.x_lower = -3, -3
sampling.x_upper = 3, 3
sampling.groups = 6
sampling.omega_step = 20
models = network, identity
architecture.hidden = 10
architecture.N = 1
training.epochs = 1000
training.learning_rate = 0.01
training.batch_size = 256
control.state_weights = 100, 1
control.R = 1
control.x0 = 1, 0
control.steps = 300
control.tol = 0.1
heatmap.enabled = true
heatmap.axes = 0, 1
heatmap.lower = -3, -3
heatmap.upper = 3, 3
heatmap.counts = 31, 31
heatmap.state_block = true
bound.enabled = true
bound.samples = 10000
predict.enabled = true
predict.count = 20
predict.steps = 50
)"},
      {"cartpole", R"(# cart-pole, Step 1 followed by the constrained Step 2
name = cartpole
system = cartpole
seed = 1
sampling.signal = cosine
sampling.trajectories = 50
sampling.steps = 50
sampling.x_lower = -3, -0.5, -1.5, -0.5
sampling.x_upper = 3, 0.5, 1.5, 0.5
sampling.groups = 6
sampling.omega_step = 20
models = network
architecture.hidden = 25
architecture.N = 1
training.epochs = 1000
training.learning_rate = 0.01
training.batch_size = 256
refinement.enabled = true
refinement.eps_A = 0.1
refinement.eps_B = 0.1
refinement.trajectories = 100
refinement.steps = 20
refinement.blowup_radius = 20
control.state_weights = 100, 1, 100, 1
control.R = 1
control.x0 = -5, 0, 1, 0
control.steps = 300
basin.enabled = true
basin.axes = 0, 2
basin.lower = -13, -2.5
basin.upper = 6.9, 2
basin.counts = 12, 10
basin.horizon = 300
heatmap.enabled = true
heatmap.axes = 0, 2
heatmap.lower = -13, -2.5
heatmap.upper = 6.9, 2
heatmap.counts = 41, 41
heatmap.state_block = true
predict.enabled = true
predict.count = 20
predict.steps = 50
)"},
  };
  return presets;
}

inline ConfigTree preset(const std::string& name) {
  const auto& all = preset_texts();
  const auto it = all.find(name);
  if (it == all.end()) {
    std::string names;
    for (const auto& [k, v] : all) names += (names.empty() ? "" : ", ") + k;
    throw InvalidInput("unknown preset '" + name + "'; valid presets: " + names);
  }
  return ConfigTree::parse_key_values(it->second);
}

// ---------------------------------------------------------------------------
// Pipeline

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"collect", "train",  "refine", "control",
                                              "heatmap", "basin",  "bound",  "predict"};
  return names;
}

/// Per-model results kept in memory and mirrored to summary.json.
struct ModelReport {
  std::string label;
  KoopmanModel model;
  std::optional<TrainingResult> training;
  std::optional<RefinementResult> refinement;
  std::optional<FeedbackGain> gain;
  std::optional<ClosedLoopResult> closed_loop;
  std::optional<ErrorField> heatmap;
  std::optional<BasinResult> basin;
  std::optional<BoundReport> bound;
  std::optional<double> prediction_rmse;
};

/// Runs the configured stages in order. With an empty output directory nothing
/// is written; otherwise every stage leaves its artifacts before the next starts.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig config, std::filesystem::path out = {})
      : config_(std::move(config)), out_(std::move(out)), system_(config_.make_system()) {}

  const ExperimentConfig& config() const { return config_; }
  const DynamicalSystem& system() const { return system_; }
  const std::optional<TrajectoryDataset>& dataset() const { return dataset_; }
  const std::map<std::string, ModelReport>& reports() const { return reports_; }
  const ModelReport& report(const std::string& label) const {
    const auto it = reports_.find(label);
    require(it != reports_.end(), "experiment: no model '" + label + "'");
    return it->second;
  }

  /// Registers an externally supplied model; later stages treat it like a trained one.
  void import_model(const std::string& label, KoopmanModel model) {
    require(model.n() == system_.n && model.p() == system_.p,
            "model dimensions do not match system '" + system_.name + "'");
    ModelReport r;
    r.label = label;
    r.model = std::move(model);
    reports_[label] = std::move(r);
  }

  void run() {
    for (const auto& s : stage_names()) run_stage(s);
    write_summary();
  }

  void run_stage(const std::string& stage) {
    if (stage == "collect") return collect();
    if (stage == "train") return train();
    if (stage == "refine") return refine_models();
    if (stage == "control") return control();
    if (stage == "heatmap") return heatmaps();
    if (stage == "basin") return basins();
    if (stage == "bound") return bounds();
    if (stage == "predict") return predictions();
    throw InvalidInput("unknown stage '" + stage + "'");
  }

  /// Runs one stage against artifacts of an earlier run in the output directory.
  void run_single_stage(const std::string& stage) {
    require(!out_.empty(), "a single stage needs an output directory with earlier artifacts");
    run_stage(stage);
    write_summary();
  }

  TrajectoryDataset collect_dataset(std::uint64_t seed) const {
    const auto& s = config_.sampling;
    if (s.mode == "pairs") return sample_pairs(system_, s.x_box, s.u_box, s.samples, seed, config_.integration);
    const BoxSampler sampler{s.x_box, seed};
    if (s.signal == "uniform") {
      const auto signal = InputSignal::uniform(s.u_box.lower[0], s.u_box.upper[0], derive_seed(seed, 1));
      return collect_trajectories(system_, sampler, signal, s.steps, config_.integration, s.trajectories);
    }
    auto data = collect_trajectories(system_, sampler, InputSignal::zero(), s.steps, config_.integration,
                                     s.trajectories);
    if (s.signal == "zero") return data;
    std::vector<double> omegas;
    for (int i = 0; i < s.groups; ++i) omegas.push_back(s.omega_step * i);
    return split_into_groups(data, system_, config_.integration, s.groups, omegas);
  }

 private:
  std::filesystem::path path(const std::string& label, const std::string& file) const {
    return label.empty() ? out_ / file : out_ / label / file;
  }
  bool writing() const { return !out_.empty(); }
  const std::string& hash() const {
    if (hash_.empty()) hash_ = config_.hash();
    return hash_;
  }

  void put(const std::filesystem::path& p, const std::string& text) const {
    if (writing()) io::write_file(p, text);
  }
  void put_json(const std::filesystem::path& p, io::json j) const {
    j["config_hash"] = hash();
    put(p, j.dump(2) + "\n");
  }

  const TrajectoryDataset& data() {
    if (!dataset_) {
      require(writing(), "experiment: no dataset; run the collect stage first");
      dataset_ = io::load_dataset(path("", "dataset.csv"));
    }
    return *dataset_;
  }

  ModelReport& model_report(const std::string& label) {
    auto it = reports_.find(label);
    if (it == reports_.end()) {
      require(writing(), "experiment: model '" + label + "' is not available; run the train stage first");
      ModelReport r;
      r.label = label;
      r.model = io::load_model(path(label, "model.json"));
      it = reports_.emplace(label, std::move(r)).first;
    }
    return it->second;
  }

  std::vector<std::string> available_labels() const {
    std::vector<std::string> out;
    for (const auto& label : config_.labels()) {
      if (reports_.count(label) || (writing() && std::filesystem::exists(path(label, "model.json")))) {
        out.push_back(label);
      }
    }
    for (const auto& [label, r] : reports_) {
      if (std::find(out.begin(), out.end(), label) == out.end()) out.push_back(label);
    }
    return out;
  }

  void stamp(KoopmanModel& m) const {
    m.provenance.config_hash = hash();
    m.provenance.system = system_.name;
    m.provenance.system_parameters = system_.parameters;
    m.provenance.integration = config_.integration;
  }

  void store(ModelReport report) {
    stamp(report.model);
    if (writing()) io::save_model(report.model, path(report.label, "model.json"));
    const std::string label = report.label;
    reports_[label] = std::move(report);
  }

  void collect() {
    dataset_ = collect_dataset(config_.sampling.seed);
    put(path("", "dataset.csv"), io::dataset_to_csv(*dataset_, hash()));
  }

  void train() {
    const auto& d = data();
    for (const auto& spec : config_.models) {
      ModelReport r;
      r.label = spec.directory();
      if (spec.trained()) {
        TrainingResult t = train_initial(d, config_.architecture, config_.training);
        if (spec.scale != 1.0) t.model = scale_model(t.model, spec.scale);
        put(path(r.label, "loss.csv"), io::loss_to_csv(t.curve, hash()));
        r.model = t.model;
        r.training = std::move(t);
      } else {
        ObservableMap obs = ObservableMap::fixed_dictionary(spec.kind, system_.n);
        obs.set_scale(spec.scale);
        r.model = fit_model(d, obs);
      }
      store(std::move(r));
    }
  }

  void refine_models() {
    if (!config_.refinement.enabled) return;
    const auto& rf = config_.refinement;
    for (const auto& spec : config_.models) {
      if (!spec.trained()) continue;
      const KoopmanModel initial = model_report(spec.directory()).model;
      const FeedbackGain gain = lqr_gain(initial, config_.weights(initial.N()));
      const BoxSampler sampler{rf.x_box, derive_seed(rf.seed, 1)};
      TrajectoryDataset closed = collect_closed_loop(system_, initial, gain, sampler, rf.steps, config_.integration,
                                                     rf.trajectories, rf.blowup_radius);
      TrajectoryDataset augmented =
          rf.fresh_data ? mix(collect_dataset(derive_seed(rf.seed, 2)), closed, rf.config.closed_loop_fraction)
                        : mix(data(), closed, rf.config.closed_loop_fraction);
      RefinementResult result = refine(initial, augmented, rf.config, config_.training);
      ModelReport r;
      r.label = spec.directory() + "_refined";
      r.model = result.model;
      put(path(r.label, "dataset.csv"), io::dataset_to_csv(augmented, hash()));
      put(path(r.label, "loss.csv"), io::loss_to_csv(result.curve, hash()));
      r.refinement = std::move(result);
      store(std::move(r));
    }
  }

  void control() {
    if (!config_.control.enabled) return;
    const auto& ct = config_.control;
    for (const auto& label : available_labels()) {
      auto& r = model_report(label);
      r.gain = lqr_gain(r.model, config_.weights(r.model.N()));
      r.closed_loop = simulate_true_closed_loop(system_, r.model, *r.gain, ct.x0, ct.steps, config_.integration,
                                                ct.options);
      put_json(path(label, "gain.json"), io::gain_to_json(*r.gain));
      put(path(label, "trajectory.csv"), io::closed_loop_to_csv(*r.closed_loop, hash()));
    }
  }

  void heatmaps() {
    if (!config_.heatmap.enabled) return;
    for (const auto& label : available_labels()) {
      auto& r = model_report(label);
      r.heatmap = error_field(r.model, system_, config_.heatmap.grid, config_.integration);
      put(path(label, "heatmap.csv"), io::heatmap_to_csv(*r.heatmap, hash()));
    }
  }

  void basins() {
    if (!config_.basin.enabled) return;
    for (const auto& label : available_labels()) {
      auto& r = model_report(label);
      if (!r.gain) r.gain = lqr_gain(r.model, config_.weights(r.model.N()));
      r.basin = estimate_basin(system_, r.model, *r.gain, config_.basin.grid, config_.basin.horizon,
                               config_.integration, config_.control.options);
      put(path(label, "basin.csv"), io::basin_to_csv(*r.basin, hash()));
    }
  }

  void bounds() {
    if (!config_.bound.enabled) return;
    for (const auto& label : available_labels()) {
      auto& r = model_report(label);
      r.bound = error_bound(r.model, system_, config_.bound.measure, config_.integration);
      put_json(path(label, "bound.json"), io::bound_to_json(*r.bound));
    }
  }

  void predictions() {
    if (!config_.predict.enabled) return;
    const auto& pr = config_.predict;
    const auto x0s = BoxSampler{pr.x_box, pr.seed}.draw(static_cast<std::size_t>(pr.count));
    const std::vector<Vector> inputs(static_cast<std::size_t>(pr.steps), Vector::Zero(system_.p));
    for (const auto& label : available_labels()) {
      auto& r = model_report(label);
      r.prediction_rmse = prediction_rmse(r.model, system_, x0s, pr.steps, config_.integration);
      std::ostringstream os;
      os << io::hash_line(hash()) << "run,k";
      for (int i = 1; i <= system_.n; ++i) os << ",xhat_" << i;
      for (int i = 1; i <= system_.n; ++i) os << ",x_" << i;
      os << '\n';
      for (std::size_t j = 0; j < x0s.size(); ++j) {
        const auto predicted = predict_states(r.model, x0s[j], inputs);
        const auto truth = simulate_open_loop(system_, x0s[j], inputs, config_.integration);
        for (std::size_t k = 0; k < truth.size(); ++k) {
          os << j << ',' << k;
          for (int i = 0; i < system_.n; ++i) os << ',' << (k < predicted.size() ? io::fmt(predicted[k][i]) : "nan");
          for (int i = 0; i < system_.n; ++i) os << ',' << io::fmt(truth[k][i]);
          os << '\n';
        }
      }
      put(path(label, "prediction.csv"), os.str());
    }
  }

  io::json summary_of(const ModelReport& r) const {
    io::json j;
    j["label"] = r.label;
    j["source"] = r.model.provenance.source;
    j["lifted_dim"] = r.model.lifted_dim();
    if (r.training) j["training"] = {{"initial_loss", r.training->initial_loss.J}, {"final_loss", r.training->final_loss.J}};
    if (r.refinement) {
      j["refinement"] = {{"initial_loss", r.refinement->initial_loss.J},
                         {"final_loss", r.refinement->final_loss.J},
                         {"delta_A_norm", spectral_norm(r.refinement->delta_A)},
                         {"delta_B_norm", spectral_norm(r.refinement->delta_B)},
                         {"iterations", r.refinement->iterations},
                         {"warnings", r.refinement->warnings}};
    }
    if (r.gain) j["closed_loop_spectral_radius"] = r.gain->closed_loop_spectral_radius;
    if (r.closed_loop) {
      j["control"] = {{"cost", r.closed_loop->cost},
                      {"converged", r.closed_loop->converged},
                      {"diverged", r.closed_loop->diverged},
                      {"settle_index", r.closed_loop->settle_index}};
    }
    if (r.basin) j["basin"] = {{"converged", r.basin->converged_count()}, {"cells", r.basin->cell_count()}};
    if (r.heatmap) {
      j["heatmap"] = {{"max_norm_r", r.heatmap->values.maxCoeff()}, {"nonfinite_cells", r.heatmap->nonfinite_cells}};
    }
    if (r.bound) j["bound"] = {{"lhs", r.bound->lhs.mean}, {"rhs", r.bound->rhs}, {"holds", r.bound->holds(3.0)}};
    if (r.prediction_rmse) j["prediction_rmse"] = *r.prediction_rmse;
    return j;
  }

  void write_summary() const {
    if (!writing()) return;
    io::json models = io::json::array();
    for (const auto& label : available_labels()) {
      const auto it = reports_.find(label);
      if (it != reports_.end()) models.push_back(summary_of(it->second));
    }
    io::json j{{"experiment", config_.name}, {"system", config_.system}, {"models", models}};
    if (dataset_) j["dataset"] = {{"triplets", dataset_->size()}, {"trajectories", dataset_->trajectory_count()},
                                  {"excluded", dataset_->excluded().size()}};
    put_json(path("", "summary.json"), j);
    put(path("", "config.cfg"), "# resolved configuration\n" + config_.tree.canonical());
  }

  ExperimentConfig config_;
  std::filesystem::path out_;
  DynamicalSystem system_;
  std::optional<TrajectoryDataset> dataset_;
  std::map<std::string, ModelReport> reports_;
  mutable std::string hash_;
};

}  // namespace kcl
