#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "pbll/errors.hpp"
#include "pbll/harness.hpp"
#include "pbll/random.hpp"
#include "pbll/ridge.hpp"
#include "pbll/serialize.hpp"

#ifndef PBLL_VERSION
#define PBLL_VERSION "0.1.0"
#endif

namespace pbll::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string version() { return PBLL_VERSION; }

namespace {

// Substream tags under the top-level seed.
constexpr std::uint64_t kSyntheticStream = 1;
constexpr std::uint64_t kInitStream = 2;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::string> out;
};

struct LoadedConfig {
  json raw;
  fs::path base;  // directory the config's relative paths resolve against
  std::uint64_t seed = 0;
};

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class T>
void read_field(const json& obj, const char* key, T& target) {
  if (auto it = obj.find(key); it != obj.end()) target = it->get<T>();
}

LoadedConfig load_config(const std::string& path, const Overrides& ov) {
  if (path.empty()) throw ConfigError("no config file given");
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  LoadedConfig cfg;
  try {
    in >> cfg.raw;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (!cfg.raw.is_object()) throw ConfigError("config must be a JSON object");
  cfg.base = fs::absolute(fs::path(path)).parent_path();
  if (ov.seed) {
    cfg.seed = *ov.seed;
  } else if (auto it = cfg.raw.find("seed"); it != cfg.raw.end() && it->is_number_unsigned()) {
    cfg.seed = it->get<std::uint64_t>();
  } else if (it != cfg.raw.end()) {
    throw ConfigError("seed must be a non-negative integer");
  } else {
    throw ConfigError("config has no seed; every run needs an explicit seed");
  }
  return cfg;
}

fs::path resolve(const LoadedConfig& cfg, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : cfg.base / path;
}

BoundConfig parse_bound(const json& j) {
  BoundConfig b;
  if (j.is_null()) return b;
  check_keys(j, {"sigma", "delta", "C"}, "bound");
  read_field(j, "sigma", b.sigma);
  read_field(j, "delta", b.delta);
  read_field(j, "C", b.C);
  b.validate();
  return b;
}

SyntheticSpec parse_synthetic(const json& j, std::uint64_t seed) {
  check_keys(j,
             {"d", "k", "n_tasks", "m_per_task", "noise_std", "mode", "kind", "n_heldout", "perturbation_var",
              "label_flip"},
             "synthetic");
  SyntheticSpec s;
  read_field(j, "d", s.d);
  read_field(j, "k", s.k);
  read_field(j, "n_tasks", s.n_tasks);
  read_field(j, "m_per_task", s.m_per_task);
  read_field(j, "noise_std", s.noise_std);
  if (j.contains("mode")) s.mode = parse_synthetic_mode(j["mode"].get<std::string>());
  if (j.contains("kind")) s.kind = parse_task_kind(j["kind"].get<std::string>());
  read_field(j, "n_heldout", s.n_heldout);
  read_field(j, "perturbation_var", s.perturbation_var);
  read_field(j, "label_flip", s.label_flip);
  s.seed = derive_seed(seed, kSyntheticStream);
  s.validate();
  return s;
}

TaskEnvironment load_data(const LoadedConfig& cfg) {
  const auto it = cfg.raw.find("data");
  if (it == cfg.raw.end()) throw ConfigError("config has no 'data' section");
  const json& d = *it;
  check_keys(d, {"manifest", "synthetic"}, "data");
  if (d.contains("manifest") == d.contains("synthetic"))
    throw ConfigError("data needs exactly one of 'manifest' or 'synthetic'");
  if (d.contains("manifest")) return load_environment_manifest(resolve(cfg, d["manifest"].get<std::string>()));
  return generate_synthetic(parse_synthetic(d["synthetic"], cfg.seed)).env;
}

CgConfig parse_cg(const json& j) {
  CgConfig c;
  check_keys(j, {"max_iters", "grad_tol", "restart_every", "armijo_c1", "backtrack", "initial_step", "max_backtracks"},
             "learner.cg");
  read_field(j, "max_iters", c.max_iters);
  read_field(j, "grad_tol", c.grad_tol);
  read_field(j, "restart_every", c.restart_every);
  read_field(j, "armijo_c1", c.armijo_c1);
  read_field(j, "backtrack", c.backtrack);
  read_field(j, "initial_step", c.initial_step);
  read_field(j, "max_backtracks", c.max_backtracks);
  return c;
}

CurvilinearConfig parse_curvilinear(const json& j) {
  CurvilinearConfig c;
  check_keys(j,
             {"max_iters", "grad_tol", "tau_init", "nonmonotone_window", "armijo_c1", "tau_min", "tau_max",
              "backtrack", "max_backtracks", "reorthonormalize_every"},
             "learner.curvilinear");
  read_field(j, "max_iters", c.max_iters);
  read_field(j, "grad_tol", c.grad_tol);
  read_field(j, "tau_init", c.tau_init);
  read_field(j, "nonmonotone_window", c.nonmonotone_window);
  read_field(j, "armijo_c1", c.armijo_c1);
  read_field(j, "tau_min", c.tau_min);
  read_field(j, "tau_max", c.tau_max);
  read_field(j, "backtrack", c.backtrack);
  read_field(j, "max_backtracks", c.max_backtracks);
  read_field(j, "reorthonormalize_every", c.reorthonormalize_every);
  c.validate();
  return c;
}

LearnerSettings parse_learner(const LoadedConfig& cfg) {
  LearnerSettings s;
  s.bound = parse_bound(cfg.raw.value("bound", json()));
  s.init_seed = derive_seed(cfg.seed, kInitStream);
  const json j = cfg.raw.value("learner", json::object());
  check_keys(j, {"subspace_dim", "init", "cg", "curvilinear"}, "learner");
  read_field(j, "subspace_dim", s.subspace_dim);
  if (s.subspace_dim < 1) throw ConfigError("learner.subspace_dim must be positive");
  if (j.contains("init")) s.init = parse_init_strategy(j["init"].get<std::string>());
  if (j.contains("cg")) s.cg = parse_cg(j["cg"]);
  if (j.contains("curvilinear")) s.curvilinear = parse_curvilinear(j["curvilinear"]);
  return s;
}

Protocol parse_protocol(const LoadedConfig& cfg, const Overrides& ov) {
  Protocol p;
  const json j = cfg.raw.value("protocol", json::object());
  check_keys(j,
             {"n_holdout", "repetitions", "observed_fractions", "c_grid", "folds", "heldout_train_fraction", "metric"},
             "protocol");
  read_field(j, "n_holdout", p.n_holdout);
  read_field(j, "repetitions", p.repetitions);
  read_field(j, "observed_fractions", p.observed_fractions);
  read_field(j, "c_grid", p.c_grid);
  read_field(j, "folds", p.folds);
  read_field(j, "heldout_train_fraction", p.heldout_train_fraction);
  if (j.contains("metric")) p.metric = parse_metric(j["metric"].get<std::string>());
  p.seed = cfg.seed;
  read_field(cfg.raw, "threads", p.threads);
  if (ov.threads) p.threads = *ov.threads;
  if (p.threads < 1) throw ConfigError("threads must be at least 1");
  return p;
}

std::vector<Method> parse_methods(const json& raw) {
  std::vector<Method> methods;
  if (raw.contains("method") && raw.contains("methods")) throw ConfigError("give either 'method' or 'methods'");
  if (auto it = raw.find("method"); it != raw.end()) methods.push_back(parse_method(it->get<std::string>()));
  if (auto it = raw.find("methods"); it != raw.end())
    for (const auto& m : *it) methods.push_back(parse_method(m.get<std::string>()));
  if (methods.empty()) throw ConfigError("config names no method");
  return methods;
}

fs::path output_dir(const LoadedConfig& cfg, const Overrides& ov) {
  if (ov.out) return fs::path(*ov.out);
  if (auto it = cfg.raw.find("output"); it != cfg.raw.end()) return resolve(cfg, it->get<std::string>());
  throw ConfigError("no output directory (config 'output' or --out)");
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  if (!out) throw DataError("write failed for " + path.string());
}

json manifest_record(const std::string& command, const LoadedConfig& cfg, const Overrides& ov) {
  json overrides = json::object();
  if (ov.seed) overrides["seed"] = *ov.seed;
  if (ov.threads) overrides["threads"] = *ov.threads;
  if (ov.out) overrides["out"] = *ov.out;
  return {{"command", command},
          {"version", version()},
          {"config", cfg.raw},
          {"overrides", overrides},
          {"seeds",
           {{"seed", cfg.seed},
            {"synthetic", derive_seed(cfg.seed, kSyntheticStream)},
            {"init", derive_seed(cfg.seed, kInitStream)}}}};
}

// --- commands ---

int cmd_run(const std::string& config_path, const Overrides& ov, std::ostream& out, fs::path& diag_dir) {
  const LoadedConfig cfg = load_config(config_path, ov);
  check_keys(cfg.raw, {"seed", "method", "methods", "data", "bound", "learner", "protocol", "threads", "output"},
             "config");
  const std::vector<Method> methods = parse_methods(cfg.raw);
  const LearnerSettings settings = parse_learner(cfg);
  const Protocol protocol = parse_protocol(cfg, ov);
  const fs::path dir = output_dir(cfg, ov);
  // Validate the data before creating any output.
  const TaskEnvironment env = load_data(cfg);
  env.validate();
  protocol.validate(static_cast<Index>(env.observed.size() + env.heldout.size()));

  fs::create_directories(dir);
  diag_dir = dir;
  json manifest = manifest_record("run", cfg, ov);
  manifest["threads"] = protocol.threads;
  manifest["tasks"] = {{"count", env.observed.size() + env.heldout.size()},
                       {"dim", env.dim()},
                       {"kind", to_string(env.kind())},
                       {"label_scale", env.label_scale}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  std::vector<MetricReport> reports;
  for (Method m : methods) {
    auto rs = run_experiment(env, m, protocol, settings);
    reports.insert(reports.end(), rs.begin(), rs.end());
  }
  std::string lines;
  for (const auto& r : reports) lines += to_json(r).dump() + "\n";
  write_file(dir / "reports.jsonl", lines);
  const std::string csv = summary_csv(reports);
  write_file(dir / "summary.csv", csv);
  out << csv;
  return kExitOk;
}

int cmd_bound(const std::string& config_path, const std::string& hyper_path, const Overrides& ov,
              std::ostream& out) {
  const LoadedConfig cfg = load_config(config_path, ov);
  check_keys(cfg.raw, {"seed", "data", "bound", "relaxed", "output", "method", "methods", "learner", "protocol", "threads"},
             "config");
  const BoundConfig bound = parse_bound(cfg.raw.value("bound", json()));
  const bool relaxed = cfg.raw.value("relaxed", false);
  if (hyper_path.empty()) throw ConfigError("bound needs --hyperposterior");
  const TaskEnvironment env = load_data(cfg);
  env.validate();
  const Hyperposterior h = read_hyperposterior(hyper_path);
  const std::span<const TaskDataset> tasks(env.observed);
  if (tasks.empty()) throw DataError("environment has no observed tasks");

  BoundReport report;
  if (const auto* g = std::get_if<GaussianHyperposterior>(&h)) {
    if (g->mean.size() != env.dim())
      throw DataError("hyperposterior mean has dimension " + std::to_string(g->mean.size()) + ", tasks have " +
                      std::to_string(env.dim()));
    const auto ops = fit_ridge_operators(tasks, bound.C, 1);
    report = env.kind() == TaskKind::Classification ? bound_classification(tasks, ops, g->mean, bound, relaxed)
                                                    : bound_regression(tasks, ops, g->mean, bound);
  } else {
    const auto& M = std::get<StiefelPoint>(h);
    if (M.rows() != env.dim()) throw DataError("subspace dimension does not match the tasks");
    if (env.kind() != TaskKind::Regression) throw DataError("the subspace bound needs regression tasks");
    report = bound_subspace(M.matrix(), tasks, bound);
  }
  json j = to_json(report);
  j["kind"] = to_string(env.kind());
  j["hyperposterior"] = std::holds_alternative<GaussianHyperposterior>(h) ? "gaussian" : "stiefel";
  j["sigma"] = bound.sigma;
  j["delta"] = bound.delta;
  j["C"] = bound.C;
  out << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_synth(const std::string& config_path, const Overrides& ov, std::ostream& out) {
  const LoadedConfig cfg = load_config(config_path, ov);
  check_keys(cfg.raw, {"seed", "synthetic", "output"}, "config");
  if (!cfg.raw.contains("synthetic")) throw ConfigError("config has no 'synthetic' section");
  const SyntheticSpec spec = parse_synthetic(cfg.raw["synthetic"], cfg.seed);
  const fs::path dir = output_dir(cfg, ov);
  const SyntheticEnvironment syn = generate_synthetic(spec);

  fs::create_directories(dir / "tasks");
  std::vector<std::string> holdout;
  for (const auto& t : syn.env.observed) write_task_csv(t, dir / "tasks" / (t.id() + ".csv"));
  for (const auto& t : syn.env.heldout) {
    write_task_csv(t, dir / "tasks" / (t.id() + ".csv"));
    holdout.push_back(t.id());
  }
  const json env_manifest = {
      {"directory", "tasks"}, {"kind", to_string(spec.kind)}, {"bias", false}, {"holdout", holdout}};
  write_file(dir / "environment.json", env_manifest.dump(2) + "\n");

  json truth = {{"mode", to_string(spec.mode)}, {"d", spec.d}, {"k", syn.truth.cols()}};
  std::vector<double> data;
  for (Index i = 0; i < syn.truth.rows(); ++i)
    for (Index c = 0; c < syn.truth.cols(); ++c) data.push_back(syn.truth(i, c));
  truth["truth"] = data;
  json weights = json::array();
  for (const auto& w : syn.task_weights) weights.push_back(std::vector<double>(w.data(), w.data() + w.size()));
  truth["task_weights"] = weights;
  write_file(dir / "truth.json", truth.dump(2) + "\n");

  write_file(dir / "manifest.json", manifest_record("synth", cfg, ov).dump(2) + "\n");
  out << "wrote " << syn.env.observed.size() + syn.env.heldout.size() << " tasks to " << (dir / "tasks").string()
      << "\n";
  return kExitOk;
}

int cmd_learn(const std::string& config_path, const Overrides& ov, std::ostream& out) {
  const LoadedConfig cfg = load_config(config_path, ov);
  check_keys(cfg.raw, {"seed", "method", "methods", "data", "bound", "learner", "protocol", "threads", "output", "relaxed"},
             "config");
  const std::vector<Method> methods = parse_methods(cfg.raw);
  if (methods.size() != 1) throw ConfigError("learn needs exactly one method");
  const LearnerSettings settings = parse_learner(cfg);
  if (!ov.out) throw ConfigError("learn needs --out for the hyperposterior file");
  const TaskEnvironment env = load_data(cfg);
  env.validate();
  const std::span<const TaskDataset> tasks(env.observed);
  if (tasks.empty()) throw DataError("environment has no observed tasks");

  switch (methods.front()) {
    case Method::PLG: {
      const GaussianHyperposterior h = env.kind() == TaskKind::Regression
                                           ? solve_plg_regression(tasks, settings.bound)
                                           : solve_plg_classification(tasks, settings.bound, settings.cg);
      write_hyperposterior(h, *ov.out);
      break;
    }
    case Method::PLL: {
      if (settings.subspace_dim > env.dim()) throw ConfigError("subspace_dim exceeds the feature dimension");
      auto init = init_subspace(tasks, settings.subspace_dim, settings.init, settings.init_seed, settings.bound.C);
      write_hyperposterior(
          solve_pll(tasks, settings.subspace_dim, settings.bound, settings.curvilinear, std::move(init.point)),
          *ov.out);
      break;
    }
    default:
      throw ConfigError("learn supports the PLG and PLL methods");
  }
  out << "wrote " << *ov.out << "\n";
  return kExitOk;
}

void write_diagnostic(const fs::path& dir, const std::string& command, const std::string& what) {
  if (dir.empty()) return;
  std::ofstream d(dir / "diagnostic.json");
  d << json{{"command", command}, {"exit_code", kExitNumerical}, {"error", what}, {"version", version()}}.dump(2)
    << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"PAC-Bayesian lifelong learning: bounds, prior learning and transfer experiments", "pbll"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);

  std::string config, hyper;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string out_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config, "JSON config file")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_path, "output location (overrides config 'output')");
  };
  CLI::App* run = app.add_subcommand("run", "repeated hold-out experiment");
  add_common(run);
  run->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  CLI::App* bound = app.add_subcommand("bound", "print the itemized bound for a hyperposterior");
  add_common(bound);
  bound->add_option("--hyperposterior", hyper, "hyperposterior JSON file")->required();
  CLI::App* synth = app.add_subcommand("synth", "write a synthetic task environment as CSV");
  add_common(synth);
  CLI::App* learn = app.add_subcommand("learn", "learn a hyperposterior from all observed tasks");
  add_common(learn);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << version() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    // Subcommand help is also signalled this way.
    if (e.get_exit_code() == 0) {
      out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  Overrides ov;
  const CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) ov.seed = seed;
  if (sub->count("--out")) ov.out = out_path;
  if (sub == run && run->count("--threads")) ov.threads = threads;

  const std::string name = sub->get_name();
  fs::path diag_dir;
  try {
    if (sub == run) return cmd_run(config, ov, out, diag_dir);
    if (sub == bound) return cmd_bound(config, hyper, ov, out);
    if (sub == synth) return cmd_synth(config, ov, out);
    return cmd_learn(config, ov, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << "\n";
    write_diagnostic(diag_dir, name, e.what());
    return kExitNumerical;
  }
}

}  // namespace pbll::cli
