// Command-line driver for Koopman control experiments.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "kcl/experiment.hpp"

namespace {

enum Exit : int {
  kOk = 0,
  kOther = 1,
  kConfig = 2,
  kSchema = 3,
  kNumeric = 4,
  kEmpty = 5,
  kUnsupported = 6,
};

struct Options {
  std::string config;
  std::string preset;
  std::string out;
  std::optional<long long> seed;
  std::string stage;
  std::string model;
};

kcl::ExperimentConfig load_config(const Options& o) {
  if (o.config.empty() == o.preset.empty()) throw kcl::InvalidInput("give exactly one of --config or --preset");
  kcl::ConfigTree tree = o.config.empty() ? kcl::preset(o.preset) : kcl::ConfigTree::load(o.config);
  if (o.seed) tree.set("seed", std::to_string(*o.seed));
  return kcl::ExperimentConfig::from_tree(tree);
}

void report(const kcl::Experiment& e) {
  for (const auto& [label, r] : e.reports()) {
    std::cout << label << ":";
    if (r.training) std::cout << " loss " << r.training->final_loss.J;
    if (r.refinement) std::cout << " refined loss " << r.refinement->final_loss.J;
    if (r.closed_loop) {
      std::cout << " cost " << r.closed_loop->cost << (r.closed_loop->converged ? " (converged)" : "")
                << (r.closed_loop->diverged ? " (diverged)" : "");
    }
    if (r.basin) std::cout << " basin " << r.basin->converged_count() << "/" << r.basin->cell_count();
    if (r.bound) std::cout << " bound " << r.bound->lhs.mean << " <= " << r.bound->rhs;
    if (r.prediction_rmse) std::cout << " rmse " << *r.prediction_rmse;
    std::cout << '\n';
  }
}

int run(const Options& o) {
  kcl::Experiment e(load_config(o), o.out);
  if (!o.out.empty()) std::filesystem::create_directories(o.out);
  if (o.stage.empty()) {
    e.run();
  } else {
    e.run_single_stage(o.stage);
  }
  report(e);
  if (!o.out.empty()) std::cout << "artifacts in " << o.out << '\n';
  return kOk;
}

/// One stage; with --model the stage runs on that file instead of the
/// experiment's own models.
int stage(const std::string& name, const Options& o) {
  kcl::Experiment e(load_config(o), o.out);
  if (o.out.empty()) throw kcl::InvalidInput("--out is required");
  std::filesystem::create_directories(o.out);
  if (!o.model.empty()) {
    std::string label = std::filesystem::path(o.model).parent_path().filename().string();
    if (label.empty()) label = "model";
    e.import_model(label, kcl::io::load_model(o.model));
  }
  e.run_single_stage(name);
  report(e);
  return kOk;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const kcl::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return kConfig;
  } catch (const kcl::InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const kcl::SchemaError& e) {
    std::cerr << "schema error: " << e.what() << '\n';
    return kSchema;
  } catch (const kcl::EmptyDatasetError& e) {
    std::cerr << "empty dataset: " << e.what() << '\n';
    return kEmpty;
  } catch (const kcl::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const kcl::ConvergenceError& e) {
    std::cerr << "convergence failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const kcl::UnsupportedOperation& e) {
    std::cerr << "unsupported: " << e.what() << '\n';
    return kUnsupported;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kSchema;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
}

void common_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "experiment configuration (key = value or JSON)");
  cmd->add_option("--preset", o.preset, "built-in experiment: motivating, pendulum, cartpole");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "overrides the configured seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Koopman embeddings for control: learning, LQR design and analysis"};
  app.require_subcommand(1);
  Options o;

  auto* run_cmd = app.add_subcommand("run", "run the configured pipeline");
  common_flags(run_cmd, o);
  run_cmd->add_option("--stage", o.stage, "run only this stage against earlier artifacts")
      ->check(CLI::IsMember(kcl::stage_names()));

  const std::vector<std::pair<std::string, std::string>> stages{
      {"simulate", "collect"}, {"train", "train"}, {"refine", "refine"}, {"control", "control"},
      {"heatmap", "heatmap"},  {"basin", "basin"}, {"bound", "bound"},   {"predict", "predict"}};
  std::vector<std::pair<CLI::App*, std::string>> stage_cmds;
  for (const auto& [cmd, stage_name] : stages) {
    auto* sub = app.add_subcommand(cmd, "run the " + stage_name + " stage");
    common_flags(sub, o);
    if (stage_name != "collect" && stage_name != "train") {
      sub->add_option("--model", o.model, "model.json to use instead of the experiment's models");
    }
    stage_cmds.emplace_back(sub, stage_name);
  }

  auto* presets_cmd = app.add_subcommand("presets", "print a built-in configuration");
  std::string preset_name;
  presets_cmd->add_option("name", preset_name, "preset to print; lists names when omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  if (*run_cmd) return guarded([&] { return run(o); });
  for (const auto& [sub, stage_name] : stage_cmds) {
    if (*sub) return guarded([&, name = stage_name] { return stage(name, o); });
  }
  if (*presets_cmd) {
    return guarded([&] {
      if (preset_name.empty()) {
        for (const auto& [k, v] : kcl::preset_texts()) std::cout << k << '\n';
      } else {
        kcl::preset(preset_name);
        std::cout << kcl::preset_texts().at(preset_name);
      }
      return int{kOk};
    });
  }
  return kOther;
}
