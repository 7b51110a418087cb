#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "kcl/analysis.hpp"
#include "kcl/control.hpp"
#include "kcl/model.hpp"
#include "kcl/sampling.hpp"
#include "kcl/training.hpp"

namespace kcl::io {

using json = nlohmann::json;

inline constexpr int kModelSchemaVersion = 1;
inline constexpr const char* kModelSchema = "kcl.koopman_model";

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Matrix matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw SchemaError(what + ": expected " + std::to_string(rows) + " rows");
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw SchemaError(what + ": row " + std::to_string(i) + " must have " + std::to_string(cols) + " entries");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw SchemaError(what + ": non-numeric entry");
      m(i, c) = v.get<double>();
    }
  }
  return m;
}

inline Vector vector_from_json(const json& j, Eigen::Index size, const std::string& what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != size) {
    throw SchemaError(what + ": expected " + std::to_string(size) + " entries");
  }
  Vector v(size);
  for (Eigen::Index i = 0; i < size; ++i) {
    const auto& e = j[static_cast<std::size_t>(i)];
    if (!e.is_number()) throw SchemaError(what + ": non-numeric entry");
    v[i] = e.get<double>();
  }
  return v;
}

inline const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(std::string("missing field '") + key + "'");
  return j.at(key);
}

template <class T>
T get(const json& j, const char* key) {
  try {
    return field(j, key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("field '") + key + "': " + e.what());
  }
}

inline json observables_to_json(const ObservableMap& obs) {
  json j;
  j["input_dim"] = obs.n();
  j["output_dim"] = obs.N();
  j["scale"] = obs.scale();
  if (obs.is_network()) {
    const auto& net = obs.net();
    j["type"] = "network";
    j["activation"] = to_string(net.activation);
    j["final_activation"] = net.final_activation;
    json layers = json::array();
    for (const auto& l : net.layers) layers.push_back({{"kernel", to_json(l.kernel)}, {"bias", to_json(l.bias)}});
    j["layers"] = std::move(layers);
  } else {
    const auto& d = obs.dict();
    j["type"] = "dictionary";
    j["name"] = Dictionary::name_of(d.kind);
    if (d.kind == Dictionary::Kind::Monomials) j["exponents"] = d.exponents;
  }
  return j;
}

inline ObservableMap observables_from_json(const json& j) {
  const auto type = get<std::string>(j, "type");
  const auto n = get<Eigen::Index>(j, "input_dim");
  const auto N = get<Eigen::Index>(j, "output_dim");
  const auto scale = get<double>(j, "scale");
  try {
    if (type == "network") {
      FeedforwardNet net;
      net.activation = activation_from_string(get<std::string>(j, "activation"));
      net.final_activation = get<bool>(j, "final_activation");
      Eigen::Index fan_in = n;
      for (const auto& lj : field(j, "layers")) {
        const auto& kernel = field(lj, "kernel");
        const auto rows = static_cast<Eigen::Index>(kernel.size());
        DenseLayer layer{matrix_from_json(kernel, rows, fan_in, "kernel"),
                         vector_from_json(field(lj, "bias"), rows, "bias")};
        net.layers.push_back(std::move(layer));
        fan_in = rows;
      }
      if (net.output_dim() != N) throw SchemaError("observables: output_dim does not match the last layer");
      return ObservableMap::from_network(n, std::move(net), scale);
    }
    if (type == "dictionary") {
      const auto name = get<std::string>(j, "name");
      ObservableMap obs = name == "monomials"
                              ? ObservableMap::monomials(n, get<std::vector<std::vector<int>>>(j, "exponents"))
                              : ObservableMap::fixed_dictionary(name, n);
      if (obs.N() != N) throw SchemaError("observables: output_dim does not match the dictionary");
      obs.set_scale(scale);
      return obs;
    }
  } catch (const InvalidInput& e) {
    throw SchemaError(std::string("observables: ") + e.what());
  }
  throw SchemaError("observables: unknown type '" + type + "'");
}

inline json model_to_json(const KoopmanModel& model) {
  json j;
  j["schema"] = kModelSchema;
  j["version"] = kModelSchemaVersion;
  j["n"] = model.n();
  j["N"] = model.N();
  j["p"] = model.p();
  j["A"] = to_json(model.A);
  j["B"] = to_json(model.B);
  j["observables"] = observables_to_json(model.observables);
  if (model.refinement) {
    const auto& r = *model.refinement;
    j["refinement"] = {{"A_initial", to_json(r.A_initial)}, {"B_initial", to_json(r.B_initial)},
                       {"delta_A", to_json(r.delta_A)},     {"delta_B", to_json(r.delta_B)},
                       {"eps_A", r.eps_A},                  {"eps_B", r.eps_B}};
  } else {
    j["refinement"] = nullptr;
  }
  const auto& pv = model.provenance;
  j["provenance"] = {{"source", pv.source},
                     {"config_hash", pv.config_hash},
                     {"system", pv.system},
                     {"system_parameters", pv.system_parameters},
                     {"dt", pv.integration.dt},
                     {"substeps", pv.integration.substeps}};
  return j;
}

inline KoopmanModel model_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("model: top level must be an object");
  const auto schema = get<std::string>(j, "schema");
  if (schema != kModelSchema) throw SchemaError("model: unexpected schema '" + schema + "'");
  const auto version = get<int>(j, "version");
  if (version != kModelSchemaVersion) {
    throw SchemaError("model: version mismatch (expected " + std::to_string(kModelSchemaVersion) + ", found " +
                      std::to_string(version) + ")");
  }
  const auto n = get<Eigen::Index>(j, "n");
  const auto N = get<Eigen::Index>(j, "N");
  const auto p = get<Eigen::Index>(j, "p");
  const Eigen::Index d = n + N;
  KoopmanModel model;
  model.A = matrix_from_json(field(j, "A"), d, d, "A");
  model.B = matrix_from_json(field(j, "B"), d, p, "B");
  model.observables = observables_from_json(field(j, "observables"));
  if (model.observables.n() != n || model.observables.N() != N) {
    throw SchemaError("model: observables dimensions disagree with n, N");
  }
  const auto& ref = field(j, "refinement");
  if (!ref.is_null()) {
    Refinement r;
    r.A_initial = matrix_from_json(field(ref, "A_initial"), d, d, "A_initial");
    r.B_initial = matrix_from_json(field(ref, "B_initial"), d, p, "B_initial");
    r.delta_A = matrix_from_json(field(ref, "delta_A"), d, d, "delta_A");
    r.delta_B = matrix_from_json(field(ref, "delta_B"), d, p, "delta_B");
    r.eps_A = get<double>(ref, "eps_A");
    r.eps_B = get<double>(ref, "eps_B");
    model.refinement = std::move(r);
  }
  const auto& pv = field(j, "provenance");
  model.provenance.source = get<std::string>(pv, "source");
  model.provenance.config_hash = get<std::string>(pv, "config_hash");
  model.provenance.system = get<std::string>(pv, "system");
  model.provenance.system_parameters = get<ParameterMap>(pv, "system_parameters");
  model.provenance.integration.dt = get<double>(pv, "dt");
  model.provenance.integration.substeps = get<int>(pv, "substeps");
  return model;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write '" + path.string() + "'");
  out << text;
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(what + ": malformed JSON (" + e.what() + ")");
  }
}

inline void save_model(const KoopmanModel& model, const std::filesystem::path& path) {
  write_file(path, model_to_json(model).dump(2) + "\n");
}

inline KoopmanModel load_model(const std::filesystem::path& path) {
  return model_from_json(parse_json(read_file(path), path.string()));
}

inline json gain_to_json(const FeedbackGain& gain) {
  return {{"K", to_json(gain.K)},
          {"Q", to_json(gain.weights.Q)},
          {"R", to_json(gain.weights.R)},
          {"design_hash", gain.design_hash},
          {"closed_loop_spectral_radius", gain.closed_loop_spectral_radius}};
}

inline FeedbackGain gain_from_json(const json& j) {
  FeedbackGain g;
  const auto& K = field(j, "K");
  const auto p = static_cast<Eigen::Index>(K.size());
  const auto d = p > 0 ? static_cast<Eigen::Index>(K[0].size()) : 0;
  g.K = matrix_from_json(K, p, d, "K");
  g.weights.Q = matrix_from_json(field(j, "Q"), d, d, "Q");
  g.weights.R = matrix_from_json(field(j, "R"), p, p, "R");
  g.design_hash = get<std::string>(j, "design_hash");
  g.closed_loop_spectral_radius = get<double>(j, "closed_loop_spectral_radius");
  return g;
}

inline json bound_to_json(const BoundReport& b) {
  auto mc = [](const MonteCarloEstimate& e) { return json{{"estimate", e.mean}, {"standard_error", e.standard_error}}; };
  return {{"samples", b.samples},
          {"lhs_r_norm_sq", mc(b.lhs)},
          {"lifted_successor_norm_sq", mc(b.lifted_next_sq)},
          {"ab_spectral_norm", b.ab_norm},
          {"h_norm_sq", mc(b.h_sq)},
          {"inner_product", mc(b.inner)},
          {"rhs_total", b.rhs},
          {"rhs_standard_error", b.rhs_standard_error},
          {"combined_standard_error", b.combined_standard_error},
          {"holds_within_3se", b.holds(3.0)},
          {"pointwise_violations", b.pointwise_violations},
          {"box_volume", b.volume},
          {"lhs_lebesgue", b.volume * b.lhs.mean}};
}

// ---------------------------------------------------------------------------
// CSV

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// Leading comment line carried by every CSV artifact.
inline std::string hash_line(const std::string& config_hash) {
  return config_hash.empty() ? std::string{} : "# config_hash: " + config_hash + "\n";
}

inline std::string dataset_to_csv(const TrajectoryDataset& data, const std::string& config_hash = {}) {
  std::ostringstream os;
  os << hash_line(config_hash);
  for (std::size_t t = 0; t < data.trajectory_count(); ++t) {
    const auto& pv = data.trajectories()[t].provenance;
    os << "# provenance " << t << ' ' << to_string(pv.kind) << ' ' << pv.seed << ' ' << fmt(pv.omega) << '\n';
  }
  os << "traj_id,k";
  for (int i = 1; i <= data.n(); ++i) os << ",x_" << i;
  for (int i = 1; i <= data.p(); ++i) os << ",u_" << i;
  for (int i = 1; i <= data.n(); ++i) os << ",y_" << i;
  os << ",group\n";
  for (std::size_t t = 0; t < data.trajectory_count(); ++t) {
    const auto& rec = data.trajectories()[t];
    for (std::size_t k = rec.begin; k < rec.end; ++k) {
      const auto& tr = data.triplets()[k];
      os << t << ',' << (k - rec.begin);
      for (Eigen::Index i = 0; i < tr.x.size(); ++i) os << ',' << fmt(tr.x[i]);
      for (Eigen::Index i = 0; i < tr.u.size(); ++i) os << ',' << fmt(tr.u[i]);
      for (Eigen::Index i = 0; i < tr.y.size(); ++i) os << ',' << fmt(tr.y[i]);
      os << ',' << rec.group << '\n';
    }
  }
  return os.str();
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline SignalKind signal_kind_from_string(const std::string& s) {
  if (s == "zero") return SignalKind::Zero;
  if (s == "uniform") return SignalKind::Uniform;
  if (s == "cosine") return SignalKind::Cosine;
  if (s == "feedback") return SignalKind::Feedback;
  throw SchemaError("unknown signal kind '" + s + "'");
}

inline TrajectoryDataset dataset_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::map<std::size_t, Provenance> provenance;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream cs(line.substr(1));
      std::string tag;
      cs >> tag;
      if (tag == "provenance") {
        std::size_t id = 0;
        std::string kind;
        Provenance pv;
        cs >> id >> kind >> pv.seed >> pv.omega;
        pv.kind = signal_kind_from_string(kind);
        provenance[id] = pv;
      }
      continue;
    }
    header = split(line, ',');
    break;
  }
  if (header.size() < 6 || header[0] != "traj_id" || header[1] != "k" || header.back() != "group") {
    throw SchemaError("dataset CSV: missing or malformed header row");
  }
  int n = 0, p = 0;
  for (const auto& h : header) {
    if (h.rfind("x_", 0) == 0) ++n;
    if (h.rfind("u_", 0) == 0) ++p;
  }
  const std::size_t width = 2 + 2 * static_cast<std::size_t>(n) + static_cast<std::size_t>(p) + 1;
  if (n < 1 || p < 1 || header.size() != width) throw SchemaError("dataset CSV: header has inconsistent columns");

  TrajectoryDataset data(n, p);
  std::vector<Triplet> current;
  long current_id = -1;
  int current_group = 0;
  auto flush = [&] {
    if (current.empty()) return;
    const auto id = static_cast<std::size_t>(current_id);
    const Provenance pv = provenance.count(id) ? provenance[id] : Provenance{};
    try {
      data.add_triplets(std::move(current), current_group, pv, 0.0);
    } catch (const InvalidInput& e) {
      throw SchemaError(std::string("dataset CSV: ") + e.what());
    }
    current.clear();
  };
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line, ',');
    if (cells.size() != width) throw SchemaError("dataset CSV: row " + std::to_string(row) + " has wrong width");
    try {
      const long id = std::stol(cells[0]);
      const long k = std::stol(cells[1]);
      if (id != current_id) {
        flush();
        current_id = id;
      }
      if (k != static_cast<long>(current.size())) {
        throw SchemaError("dataset CSV: row " + std::to_string(row) + " breaks the step order");
      }
      Triplet t{Vector(n), Vector(p), Vector(n)};
      std::size_t c = 2;
      for (int i = 0; i < n; ++i) t.x[i] = std::stod(cells[c++]);
      for (int i = 0; i < p; ++i) t.u[i] = std::stod(cells[c++]);
      for (int i = 0; i < n; ++i) t.y[i] = std::stod(cells[c++]);
      current_group = std::stoi(cells[c]);
      current.push_back(std::move(t));
    } catch (const std::logic_error&) {
      throw SchemaError("dataset CSV: unparsable value in row " + std::to_string(row));
    }
  }
  flush();
  if (data.empty()) throw SchemaError("dataset CSV: no data rows");
  return data;
}

inline void save_dataset(const TrajectoryDataset& data, const std::filesystem::path& path,
                         const std::string& config_hash = {}) {
  write_file(path, dataset_to_csv(data, config_hash));
}

inline TrajectoryDataset load_dataset(const std::filesystem::path& path) { return dataset_from_csv(read_file(path)); }

inline std::string loss_to_csv(const std::vector<LossRecord>& curve, const std::string& config_hash = {}) {
  std::ostringstream os;
  os << hash_line(config_hash) << "epoch,J,term1,term2\n";
  for (const auto& r : curve) os << r.epoch << ',' << fmt(r.loss.J) << ',' << fmt(r.loss.term1) << ',' << fmt(r.loss.term2) << '\n';
  return os.str();
}

inline std::string closed_loop_to_csv(const ClosedLoopResult& run, const std::string& config_hash = {}) {
  std::ostringstream os;
  const auto n = run.states.empty() ? 0 : run.states.front().size();
  const auto p = run.inputs.empty() ? 1 : run.inputs.front().size();
  os << hash_line(config_hash) << "k";
  for (Eigen::Index i = 1; i <= n; ++i) os << ",x_" << i;
  for (Eigen::Index i = 1; i <= p; ++i) os << ",u_" << i;
  os << ",cost_to_go\n";
  const auto ctg = run.cost_to_go();
  for (std::size_t k = 0; k < run.states.size(); ++k) {
    os << k;
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << fmt(run.states[k][i]);
    for (Eigen::Index i = 0; i < p; ++i) os << ',' << (k < run.inputs.size() ? fmt(run.inputs[k][i]) : std::string{});
    os << ',' << fmt(k < ctg.size() ? ctg[k] : 0.0) << '\n';
  }
  return os.str();
}

inline std::string states_to_csv(const std::vector<Vector>& states, const std::string& prefix,
                                 const std::string& config_hash = {}) {
  std::ostringstream os;
  const auto n = states.empty() ? 0 : states.front().size();
  os << hash_line(config_hash) << "k";
  for (Eigen::Index i = 1; i <= n; ++i) os << ',' << prefix << i;
  os << '\n';
  for (std::size_t k = 0; k < states.size(); ++k) {
    os << k;
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << fmt(states[k][i]);
    os << '\n';
  }
  return os.str();
}

inline std::string heatmap_to_csv(const ErrorField& field, const std::string& config_hash = {}) {
  std::ostringstream os;
  os << hash_line(config_hash) << "axis1,axis2,norm_r\n";
  for (int i = 0; i < field.grid.counts[0]; ++i) {
    for (int j = 0; j < field.grid.counts[1]; ++j) {
      os << fmt(field.grid.value(0, i)) << ',' << fmt(field.grid.value(1, j)) << ',' << fmt(field.values(i, j)) << '\n';
    }
  }
  return os.str();
}

inline std::string basin_to_csv(const BasinResult& basin, const std::string& config_hash = {}) {
  std::ostringstream os;
  os << hash_line(config_hash) << "axis1,axis2,converged\n";
  for (int i = 0; i < basin.grid.counts[0]; ++i) {
    for (int j = 0; j < basin.grid.counts[1]; ++j) {
      os << fmt(basin.grid.value(0, i)) << ',' << fmt(basin.grid.value(1, j)) << ','
         << (basin.converged[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

}  // namespace kcl::io
