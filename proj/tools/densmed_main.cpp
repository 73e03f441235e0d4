// Command-line front end: `simulate` runs the estimator comparison study,
// `analyze` runs the full residual-disparity pipeline on a dataset CSV,
// `lrt` compares nested outcome models, `density-grid` exports fitted
// conditional mediator densities. Exit codes: 0 success, 1 runtime failure,
// 2 usage or configuration error.

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "densmed/aft.hpp"
#include "densmed/core.hpp"
#include "densmed/lddp.hpp"
#include "densmed/mediators.hpp"
#include "densmed/rd.hpp"
#include "densmed/rng.hpp"
#include "densmed/sim.hpp"

namespace {

using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

// Thrown for anything the user got wrong before computation starts.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] void usage_fail(const std::string& msg) { throw UsageError(msg); }

// Configuration and input validation runs under this wrapper so module errors
// raised before any computation map to the usage exit code.
template <class F>
auto as_usage(F&& f) {
  try {
    return f();
  } catch (const densmed::Error& e) {
    throw UsageError(e.what());
  }
}

// ---- config file ------------------------------------------------------------

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) usage_fail("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    usage_fail("config file '" + path + "': " + e.what());
  }
  if (!j.is_object()) usage_fail("config file '" + path + "' must hold a JSON object");
  return j;
}

void check_keys(const json& cfg, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& item : cfg.items())
    if (!allowed.count(item.key()))
      usage_fail("unknown " + where + " key '" + item.key() + "'");
}

// Flag beats config file beats default. `counted` says whether the flag was
// given on the command line.
template <class T>
T resolve(bool counted, const T& cli_value, const json& cfg, const std::string& key,
          const T& fallback) {
  if (counted) return cli_value;
  if (cfg.contains(key)) {
    try {
      return cfg.at(key).get<T>();
    } catch (const json::exception& e) {
      usage_fail("config key '" + key + "': " + e.what());
    }
  }
  return fallback;
}

int resolve_threads(bool counted, int cli_value, const json& cfg) {
  if (counted) return cli_value;
  if (cfg.contains("threads")) return resolve(false, 0, cfg, "threads", 1);
  if (const char* env = std::getenv("DENSMED_THREADS")) {
    try {
      return static_cast<int>(densmed::parse_long(env, "DENSMED_THREADS"));
    } catch (const densmed::Error& e) {
      usage_fail(e.what());
    }
  }
  return 1;
}

std::uint64_t resolve_seed(bool counted, std::uint64_t cli_value, const json& cfg) {
  if (counted) return cli_value;
  if (cfg.contains("seed")) {
    if (!cfg.at("seed").is_number_unsigned())
      usage_fail("config key 'seed' must be a nonnegative integer");
    return cfg.at("seed").get<std::uint64_t>();
  }
  usage_fail("a seed is required (--seed or config key 'seed'); there is no wall-clock default");
}

// Names are matched ignoring case, '_' and '-', so `--scenario trinomial`
// selects Trinomial.
std::string canon(std::string_view s) {
  std::string out;
  for (char c : s)
    if (c != '_' && c != '-') out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return out;
}

template <class Enum, class Parse>
Enum parse_name(const std::string& given, const Parse& parse,
                std::initializer_list<const char*> known, const std::string& what) {
  for (const char* k : known)
    if (canon(given) == canon(k)) return parse(k);
  std::string expected;
  for (const char* k : known) {
    if (!expected.empty()) expected += "|";
    expected += k;
  }
  usage_fail("unknown " + what + ": '" + given + "' (expected " + expected + ")");
}

densmed::ScenarioKind parse_scenario_arg(const std::string& s) {
  return parse_name<densmed::ScenarioKind>(
      s, [](const char* k) { return densmed::parse_scenario(k); },
      {"LocationShift", "RightTailed", "Bimodal", "Trinomial"}, "scenario");
}

densmed::ThetaRegime parse_regime_arg(const std::string& s) {
  return parse_name<densmed::ThetaRegime>(
      s, [](const char* k) { return densmed::parse_regime(k); },
      {"base", "base_interaction", "doubled", "doubled_interaction"}, "theta regime");
}

densmed::SimMethod parse_method_arg(const std::string& s) {
  return parse_name<densmed::SimMethod>(
      s, [](const char* k) { return densmed::parse_method(k); },
      {"Density", "Linear", "BCL", "Traditional"}, "method");
}

// ---- manifest ----------------------------------------------------------------

std::string hash_hex(const std::string& s) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(densmed::fnv1a(s)));
  return buf;
}

void write_manifest(const std::filesystem::path& dir, const std::string& command,
                    const json& config, const std::vector<std::string>& outputs) {
  json m;
  m["command"] = command;
  m["config"] = config;
  m["config_hash"] = hash_hex(config.dump());
  m["outputs"] = outputs;
  m["versions"] = {{"densmed", kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                 std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"compiler", __VERSION__}};
  std::ofstream out(dir / "manifest.json");
  if (!out) densmed::fail("cannot write manifest in '" + dir.string() + "'");
  out << m.dump(2) << "\n";
}

std::filesystem::path prepare_out_dir(const std::string& dir) {
  std::filesystem::path p = dir.empty() ? "." : dir;
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) usage_fail("cannot create output directory '" + p.string() + "': " + ec.message());
  return p;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

// ---- simulate -----------------------------------------------------------------

struct SimulateArgs {
  std::string config_path, out_dir = ".";
  std::vector<std::string> scenarios, regimes, methods;
  int reps = 0;
  std::uint64_t seed = 0;
  int threads = 1;
  int n_per_group = 0;
  bool full = false;
};

void add_simulate(CLI::App& app, SimulateArgs& a, CLI::App** sub) {
  CLI::App* c = app.add_subcommand("simulate", "run the estimator comparison study");
  c->add_option("--config", a.config_path, "JSON config file; flags override its keys");
  c->add_option("--out-dir", a.out_dir, "output directory (metrics.csv, manifest.json)");
  c->add_option("--scenario", a.scenarios, "target-group mediator scenario(s)")->delimiter(',');
  c->add_option("--theta,--regime", a.regimes, "outcome coefficient regime(s)")->delimiter(',');
  c->add_option("--method", a.methods, "estimator(s) to run")->delimiter(',');
  c->add_option("--reps", a.reps, "replications per scenario/regime cell");
  c->add_option("--seed", a.seed, "root RNG seed (required here or in the config)");
  c->add_option("--threads", a.threads, "worker threads; 0 = all cores");
  c->add_option("--n-per-group", a.n_per_group, "override subjects per group (0 = scenario default)");
  c->add_flag("--full", a.full, "full-scale run: 500 replications, long chains");
  *sub = c;
}

densmed::SimMcmc mcmc_from_config(const json& cfg, const densmed::SimMcmc& base) {
  densmed::SimMcmc mc = base;
  if (!cfg.contains("mcmc")) return mc;
  const json& m = cfg.at("mcmc");
  if (!m.is_object()) usage_fail("config key 'mcmc' must be an object");
  check_keys(m, {"lddp_truncation", "lddp_iterations", "lddp_burn_in", "lddp_thinning",
                 "aft_iterations", "aft_burn_in", "aft_thinning", "grid_points", "rd_draws",
                 "linear_draws"},
             "mcmc config");
  mc.lddp_truncation = resolve(false, 0, m, "lddp_truncation", mc.lddp_truncation);
  mc.lddp_iterations = resolve(false, 0, m, "lddp_iterations", mc.lddp_iterations);
  mc.lddp_burn_in = resolve(false, 0, m, "lddp_burn_in", mc.lddp_burn_in);
  mc.lddp_thinning = resolve(false, 0, m, "lddp_thinning", mc.lddp_thinning);
  mc.aft_iterations = resolve(false, 0, m, "aft_iterations", mc.aft_iterations);
  mc.aft_burn_in = resolve(false, 0, m, "aft_burn_in", mc.aft_burn_in);
  mc.aft_thinning = resolve(false, 0, m, "aft_thinning", mc.aft_thinning);
  mc.grid_points = resolve(false, 0, m, "grid_points", mc.grid_points);
  mc.rd_draws = resolve(false, 0, m, "rd_draws", mc.rd_draws);
  mc.linear_draws = resolve(false, 0, m, "linear_draws", mc.linear_draws);
  return mc;
}

struct SimulatePlan {
  densmed::StudySpec spec;
  std::filesystem::path dir;
  json resolved;
};

SimulatePlan resolve_simulate(const CLI::App& cmd, SimulateArgs& a) {
  json cfg = load_config(a.config_path);
  check_keys(cfg, {"scenarios", "regimes", "methods", "replications", "seed", "threads",
                   "n_per_group", "full", "mcmc", "out_dir"},
             "simulate config");

  SimulatePlan plan;
  densmed::StudySpec& spec = plan.spec;
  bool full = resolve(cmd.count("--full") > 0, a.full, cfg, "full", false);
  auto scen_names = resolve(cmd.count("--scenario") > 0, a.scenarios, cfg, "scenarios",
                            std::vector<std::string>{});
  auto regime_names = resolve(cmd.count("--theta") > 0, a.regimes, cfg, "regimes",
                              std::vector<std::string>{});
  auto method_names = resolve(cmd.count("--method") > 0, a.methods, cfg, "methods",
                              std::vector<std::string>{});
  if (!scen_names.empty()) {
    spec.scenarios.clear();
    for (const auto& s : scen_names) spec.scenarios.push_back(parse_scenario_arg(s));
  }
  if (!regime_names.empty()) {
    spec.regimes.clear();
    for (const auto& s : regime_names) spec.regimes.push_back(parse_regime_arg(s));
  }
  if (!method_names.empty()) {
    spec.methods.clear();
    for (const auto& s : method_names) spec.methods.push_back(parse_method_arg(s));
  }
  if (full) {
    spec.replications = 500;
    spec.mcmc = densmed::SimMcmc::full();
  }
  spec.replications = resolve(cmd.count("--reps") > 0, a.reps, cfg, "replications",
                              spec.replications);
  if (spec.replications <= 0) usage_fail("replications must be positive");
  spec.seed = resolve_seed(cmd.count("--seed") > 0, a.seed, cfg);
  spec.threads = resolve_threads(cmd.count("--threads") > 0, a.threads, cfg);
  spec.n_per_group_override = resolve(cmd.count("--n-per-group") > 0, a.n_per_group, cfg,
                                      "n_per_group", 0);
  if (spec.n_per_group_override < 0) usage_fail("n_per_group must be nonnegative");
  spec.mcmc = mcmc_from_config(cfg, spec.mcmc);
  spec.mcmc.validate();
  plan.dir = prepare_out_dir(resolve(cmd.count("--out-dir") > 0, a.out_dir, cfg, "out_dir",
                                     std::string(".")));

  json& resolved = plan.resolved;
  for (auto k : spec.scenarios) resolved["scenarios"].push_back(densmed::scenario_name(k));
  for (auto r : spec.regimes) resolved["regimes"].push_back(densmed::regime_name(r));
  for (auto m : spec.methods) resolved["methods"].push_back(densmed::method_name(m));
  resolved["replications"] = spec.replications;
  resolved["seed"] = spec.seed;
  resolved["threads"] = spec.threads;
  resolved["n_per_group"] = spec.n_per_group_override;
  resolved["full"] = full;
  resolved["mcmc"] = {{"lddp_truncation", spec.mcmc.lddp_truncation},
                      {"lddp_iterations", spec.mcmc.lddp_iterations},
                      {"lddp_burn_in", spec.mcmc.lddp_burn_in},
                      {"lddp_thinning", spec.mcmc.lddp_thinning},
                      {"aft_iterations", spec.mcmc.aft_iterations},
                      {"aft_burn_in", spec.mcmc.aft_burn_in},
                      {"aft_thinning", spec.mcmc.aft_thinning},
                      {"grid_points", spec.mcmc.grid_points},
                      {"rd_draws", spec.mcmc.rd_draws},
                      {"linear_draws", spec.mcmc.linear_draws}};
  return plan;
}

int run_simulate(const CLI::App& cmd, SimulateArgs& a) {
  SimulatePlan plan = as_usage([&] { return resolve_simulate(cmd, a); });
  auto rows = densmed::run_study(plan.spec, &std::cerr);
  densmed::write_metrics_csv((plan.dir / "metrics.csv").string(), rows);
  write_manifest(plan.dir, "simulate", plan.resolved, {"metrics.csv"});
  return 0;
}

// ---- shared analyze/lrt model plumbing ----------------------------------------

// Splits "group:age,mediator:sex" into (kind, factor index) pairs.
struct InteractionSet {
  std::vector<int> group_factors;
  std::vector<int> mediator_factors;
};

InteractionSet parse_interactions(const std::vector<std::string>& tokens,
                                  const densmed::FactorSchema& schema) {
  InteractionSet out;
  for (const auto& tok : tokens) {
    auto parts = densmed::split(tok, ':');
    if (parts.size() != 2)
      usage_fail("interaction '" + tok + "' must look like group:FACTOR or mediator:FACTOR");
    std::string kind = canon(densmed::trim(parts[0]));
    std::string factor(densmed::trim(parts[1]));
    int idx = -1;
    for (int f = 0; f < schema.n_factors(); ++f)
      if (schema.factors[f].name == factor) idx = f;
    if (idx < 0) usage_fail("interaction '" + tok + "': no covariate factor named '" + factor + "'");
    if (kind == "group")
      out.group_factors.push_back(idx);
    else if (kind == "mediator")
      out.mediator_factors.push_back(idx);
    else
      usage_fail("interaction '" + tok + "' must start with 'group:' or 'mediator:'");
  }
  return out;
}

std::vector<int> all_factor_indices(const densmed::FactorSchema& schema) {
  std::vector<int> idx(schema.n_factors());
  for (int f = 0; f < schema.n_factors(); ++f) idx[f] = f;
  return idx;
}

densmed::McmcConfig lddp_config_from(const json& cfg, std::uint64_t seed) {
  densmed::McmcConfig mc;
  mc.seed = densmed::substream(seed, {1});
  if (!cfg.contains("lddp")) return mc;
  const json& m = cfg.at("lddp");
  if (!m.is_object()) usage_fail("config key 'lddp' must be an object");
  check_keys(m, {"truncation", "iterations", "burn_in", "thinning"}, "lddp config");
  mc.truncation = resolve(false, 0, m, "truncation", mc.truncation);
  mc.iterations = resolve(false, 0, m, "iterations", mc.iterations);
  mc.burn_in = resolve(false, 0, m, "burn_in", mc.burn_in);
  mc.thinning = resolve(false, 0, m, "thinning", mc.thinning);
  return mc;
}

densmed::AftSamplerConfig aft_config_from(const json& cfg, std::uint64_t seed) {
  densmed::AftSamplerConfig ac;
  ac.seed = densmed::substream(seed, {2});
  if (!cfg.contains("aft")) return ac;
  const json& m = cfg.at("aft");
  if (!m.is_object()) usage_fail("config key 'aft' must be an object");
  check_keys(m, {"iterations", "burn_in", "thinning"}, "aft config");
  ac.iterations = resolve(false, 0, m, "iterations", ac.iterations);
  ac.burn_in = resolve(false, 0, m, "burn_in", ac.burn_in);
  ac.thinning = resolve(false, 0, m, "thinning", ac.thinning);
  return ac;
}

// ---- analyze -------------------------------------------------------------------

struct AnalyzeArgs {
  std::string config_path, out_dir = ".", data_path, lddp_fit_path, weights = "group1";
  std::vector<std::string> methods, interactions;
  std::vector<double> cutpoints;
  int poly = 1;
  double center = 0.0;
  bool no_group_mediator = false;
  std::uint64_t seed = 0;
  int threads = 1;
  int grid_points = 200;
  int rd_draws = 1000;
  int linear_draws = 4000;
  int bootstrap = 200;
};

void add_analyze(CLI::App& app, AnalyzeArgs& a, CLI::App** sub) {
  CLI::App* c = app.add_subcommand(
      "analyze", "estimate disparity, residual disparity, and percent reduction from a dataset");
  c->add_option("--config", a.config_path, "JSON config file; flags override its keys");
  c->add_option("--out-dir", a.out_dir, "output directory");
  c->add_option("--data", a.data_path, "dataset CSV: time,event,group,mediator[,factor...]");
  c->add_option("--method", a.methods, "estimator(s): Density, Linear, BCL, Traditional")
      ->delimiter(',');
  c->add_option("--interactions", a.interactions,
                "group:FACTOR / mediator:FACTOR interaction terms for the outcome model")
      ->delimiter(',');
  c->add_option("--weights", a.weights,
                "stratum weighting population for the marginal: group1, group0, or pooled");
  c->add_option("--cutpoints", a.cutpoints, "mediator category cutpoints for the BCL method")
      ->delimiter(',');
  c->add_option("--poly", a.poly, "polynomial degree of the mediator in the outcome model");
  c->add_option("--center-mediator", a.center, "centering constant for mediator polynomial terms");
  c->add_flag("--no-group-mediator", a.no_group_mediator,
              "drop the group x mediator interaction from the outcome model");
  c->add_option("--seed", a.seed, "root RNG seed (required here or in the config)");
  c->add_option("--threads", a.threads, "worker threads; 0 = all cores");
  c->add_option("--grid-points", a.grid_points, "mediator grid size for density evaluation");
  c->add_option("--rd-draws", a.rd_draws, "Monte Carlo draws per posterior iteration");
  c->add_option("--linear-draws", a.linear_draws, "Monte Carlo draws for the linear method");
  c->add_option("--bootstrap", a.bootstrap, "bootstrap replicates for non-Bayesian intervals");
  c->add_option("--lddp-fit", a.lddp_fit_path, "reuse a saved mediator-density fit (JSON)");
  *sub = c;
}

struct AnalyzePlan {
  densmed::Dataset data;
  std::vector<densmed::SimMethod> methods;
  densmed::WeightPopulation weights = densmed::WeightPopulation::group1;
  std::string weights_name = "group1";
  densmed::DesignMatrixSpec med_design, out_design, cat_design, disp_design;
  std::vector<double> cutpoints;
  densmed::McmcConfig lddp_cfg;
  densmed::AftSamplerConfig aft_cfg;
  std::optional<densmed::LddpFit> lddp_in;
  std::uint64_t seed = 0;
  int threads = 1, grid_points = 200, rd_draws = 1000, linear_draws = 4000, bootstrap = 200;
  int poly = 1;
  double center = 0.0;
  bool group_mediator = true;
  std::vector<std::string> interactions;
  std::filesystem::path dir;
  json resolved;
};

AnalyzePlan resolve_analyze(const CLI::App& cmd, AnalyzeArgs& a) {
  json cfg = load_config(a.config_path);
  check_keys(cfg, {"data", "out_dir", "methods", "interactions", "weights", "cutpoints", "poly",
                   "center_mediator", "group_mediator", "seed", "threads", "grid_points",
                   "rd_draws", "linear_draws", "bootstrap", "lddp_fit", "lddp", "aft"},
             "analyze config");
  AnalyzePlan p;

  std::string data = resolve(cmd.count("--data") > 0, a.data_path, cfg, "data", std::string());
  if (data.empty()) usage_fail("a dataset is required (--data or config key 'data')");
  p.data = densmed::load_dataset(data);
  for (const auto& w : p.data.warnings) std::cerr << "warning: " << w << "\n";

  auto method_names = resolve(cmd.count("--method") > 0, a.methods, cfg, "methods",
                              std::vector<std::string>{"Density", "Linear", "BCL", "Traditional"});
  if (method_names.empty()) usage_fail("at least one method is required");
  for (const auto& m : method_names) p.methods.push_back(parse_method_arg(m));

  std::string w = canon(resolve(cmd.count("--weights") > 0, a.weights, cfg, "weights",
                                std::string("group1")));
  if (w == "group1")
    p.weights = densmed::WeightPopulation::group1;
  else if (w == "group0")
    p.weights = densmed::WeightPopulation::group0;
  else if (w == "pooled")
    p.weights = densmed::WeightPopulation::pooled;
  else
    usage_fail("unknown weights population '" + w + "' (expected group1|group0|pooled)");
  p.weights_name = w;

  p.poly = resolve(cmd.count("--poly") > 0, a.poly, cfg, "poly", 1);
  if (p.poly < 1) usage_fail("poly must be >= 1");
  p.center = resolve(cmd.count("--center-mediator") > 0, a.center, cfg, "center_mediator", 0.0);
  p.group_mediator = resolve(false, true, cfg, "group_mediator", true);
  if (cmd.count("--no-group-mediator") > 0) p.group_mediator = false;
  p.interactions = resolve(cmd.count("--interactions") > 0, a.interactions, cfg, "interactions",
                           std::vector<std::string>{});
  auto inter = parse_interactions(p.interactions, p.data.schema);
  p.cutpoints = resolve(cmd.count("--cutpoints") > 0, a.cutpoints, cfg, "cutpoints",
                        densmed::bmi_cutpoints());
  if (p.cutpoints.empty() || !std::is_sorted(p.cutpoints.begin(), p.cutpoints.end()))
    usage_fail("cutpoints must be nonempty and increasing");

  p.seed = resolve_seed(cmd.count("--seed") > 0, a.seed, cfg);
  p.threads = resolve_threads(cmd.count("--threads") > 0, a.threads, cfg);
  p.grid_points = resolve(cmd.count("--grid-points") > 0, a.grid_points, cfg, "grid_points", 200);
  p.rd_draws = resolve(cmd.count("--rd-draws") > 0, a.rd_draws, cfg, "rd_draws", 1000);
  p.linear_draws = resolve(cmd.count("--linear-draws") > 0, a.linear_draws, cfg, "linear_draws",
                           4000);
  p.bootstrap = resolve(cmd.count("--bootstrap") > 0, a.bootstrap, cfg, "bootstrap", 200);
  if (p.grid_points < 2 || p.rd_draws < 1 || p.linear_draws < 1 || p.bootstrap < 1)
    usage_fail("grid_points, rd_draws, linear_draws, and bootstrap must be positive");

  p.lddp_cfg = lddp_config_from(cfg, p.seed);
  p.aft_cfg = aft_config_from(cfg, p.seed);
  try {
    p.lddp_cfg.validate();
    p.aft_cfg.validate();
  } catch (const densmed::Error& e) {
    usage_fail(e.what());
  }
  if (p.lddp_cfg.retained() != p.aft_cfg.retained())
    usage_fail("mediator and outcome chains must retain the same number of draws (lddp " +
               std::to_string(p.lddp_cfg.retained()) + ", aft " +
               std::to_string(p.aft_cfg.retained()) + ")");

  const auto& schema = p.data.schema;
  p.med_design.schema = schema;
  p.med_design.basis = densmed::MediatorBasis::none();

  p.out_design.schema = schema;
  p.out_design.basis = densmed::MediatorBasis::polynomial(p.poly, p.center);
  p.out_design.group_mediator = p.group_mediator;
  p.out_design.group_covariate_factors = inter.group_factors;
  p.out_design.mediator_covariate_factors = inter.mediator_factors;

  // Category-coded outcome model; a group x category interaction is not used
  // because sparse upper categories make it routinely unidentifiable.
  p.cat_design = p.out_design;
  p.cat_design.basis = densmed::MediatorBasis::categorical(p.cutpoints);
  p.cat_design.group_mediator = false;

  p.disp_design.schema = schema;
  p.disp_design.basis = densmed::MediatorBasis::none();
  p.disp_design.group_covariate_factors = inter.group_factors;

  try {
    p.out_design.validate();
    p.cat_design.validate();
    p.disp_design.validate();
  } catch (const densmed::Error& e) {
    usage_fail(e.what());
  }

  std::string fit_path = resolve(cmd.count("--lddp-fit") > 0, a.lddp_fit_path, cfg, "lddp_fit",
                                 std::string());
  if (!fit_path.empty()) {
    densmed::LddpFit fit;
    try {
      fit = densmed::read_lddp_fit(fit_path);
    } catch (const densmed::Error& e) {
      usage_fail(e.what());
    }
    if (fit.spec.schema.n_factors() != schema.n_factors())
      usage_fail("saved mediator fit was built for a different covariate schema");
    for (int f = 0; f < schema.n_factors(); ++f)
      if (fit.spec.schema.factors[f].name != schema.factors[f].name ||
          fit.spec.schema.factors[f].levels != schema.factors[f].levels)
        usage_fail("saved mediator fit factor '" + fit.spec.schema.factors[f].name +
                   "' does not match the dataset schema");
    if (static_cast<int>(fit.draws.size()) != p.aft_cfg.retained())
      usage_fail("saved mediator fit retains " + std::to_string(fit.draws.size()) +
                 " draws but the outcome chain retains " + std::to_string(p.aft_cfg.retained()));
    p.lddp_in = std::move(fit);
  }

  p.dir = prepare_out_dir(resolve(cmd.count("--out-dir") > 0, a.out_dir, cfg, "out_dir",
                                  std::string(".")));

  p.resolved["data"] = data;
  for (auto m : p.methods) p.resolved["methods"].push_back(densmed::method_name(m));
  p.resolved["weights"] = p.weights_name;
  p.resolved["poly"] = p.poly;
  p.resolved["center_mediator"] = p.center;
  p.resolved["group_mediator"] = p.group_mediator;
  p.resolved["interactions"] = p.interactions;
  p.resolved["cutpoints"] = p.cutpoints;
  p.resolved["seed"] = p.seed;
  p.resolved["threads"] = p.threads;
  p.resolved["grid_points"] = p.grid_points;
  p.resolved["rd_draws"] = p.rd_draws;
  p.resolved["linear_draws"] = p.linear_draws;
  p.resolved["bootstrap"] = p.bootstrap;
  p.resolved["lddp_fit"] = fit_path;
  p.resolved["lddp"] = {{"truncation", p.lddp_cfg.truncation},
                        {"iterations", p.lddp_cfg.iterations},
                        {"burn_in", p.lddp_cfg.burn_in},
                        {"thinning", p.lddp_cfg.thinning}};
  p.resolved["aft"] = {{"iterations", p.aft_cfg.iterations},
                       {"burn_in", p.aft_cfg.burn_in},
                       {"thinning", p.aft_cfg.thinning}};
  return p;
}

struct MethodCell {
  bool available = false;
  densmed::IntervalSummary rd, reduction;
  std::vector<double> draws;  // posterior draws or bootstrap replicates
};

void write_summary_row(std::ofstream& out, const std::string& stratum, const std::string& method,
                       const MethodCell& cell) {
  out << csv_quote(stratum) << "," << method << ",";
  if (cell.available)
    out << densmed::format_double(cell.rd.point) << "," << densmed::format_double(cell.rd.lower)
        << "," << densmed::format_double(cell.rd.upper);
  else
    out << "NA,NA,NA";
  out << "\n";
}

int run_analyze(AnalyzePlan& p) {
  using namespace densmed;
  const auto& schema = p.data.schema;
  const auto& records = p.data.records;
  require(!records.empty(), "analyze: dataset has no rows");
  auto strata = enumerate_strata(schema);
  const int n_strata = static_cast<int>(strata.size());
  const std::size_t n = records.size();

  // Strata with no target-group subjects get no residual disparity.
  std::vector<int> n_group0(n_strata, 0);
  for (const auto& r : records)
    if (r.group == 0) ++n_group0[stratum_index(r.covariates, schema)];
  std::vector<bool> available(n_strata, true);
  for (int c = 0; c < n_strata; ++c) {
    if (n_group0[c] == 0) {
      available[c] = false;
      std::cerr << "warning: stratum " << strata[c].label(schema)
                << " has no group-0 subjects; residual disparity unavailable\n";
    }
  }

  Eigen::VectorXd weights = stratum_weights(records, schema, p.weights);
  bool marginal_ok = true;
  for (int c = 0; c < n_strata; ++c)
    if (!available[c] && weights(c) > 0.0) marginal_ok = false;
  if (!marginal_ok)
    std::cerr << "warning: a positively weighted stratum is unavailable; "
                 "marginal residual disparity unavailable\n";

  bool want_density = false, want_linear = false, want_bcl = false, want_trad = false;
  for (auto m : p.methods) {
    want_density |= m == SimMethod::density;
    want_linear |= m == SimMethod::linear;
    want_bcl |= m == SimMethod::bcl;
    want_trad |= m == SimMethod::traditional;
  }

  // Disparity before intervention: group effect of the mediator-free model.
  AftFit disp_fit;
  {
    AftSamplerConfig dc = p.aft_cfg;
    dc.seed = substream(p.seed, {5});
    disp_fit = fit_aft_bayes(records, p.disp_design, AftPrior::default_for(
                                 ColumnLayout::build(p.disp_design).n_cols), dc);
  }
  std::vector<std::vector<double>> disp_draws_by_stratum(n_strata);
  for (int c = 0; c < n_strata; ++c)
    disp_draws_by_stratum[c] = disparity_draws(disp_fit, strata[c].levels);
  std::vector<double> disp_marginal = rd_marginal(disp_draws_by_stratum, weights);

  // method name -> per-stratum cells + marginal cell
  std::map<std::string, std::vector<MethodCell>> cells;
  std::map<std::string, MethodCell> marginal;

  std::vector<std::string> outputs;
  std::ofstream grid_out;
  if (want_density) {
    grid_out.open(p.dir / "density_grid.csv");
    if (!grid_out) fail("cannot write density grid file");
    grid_out << "stratum,iteration,m,f,F\n";
    outputs.push_back("density_grid.csv");
  }

  if (want_density) {
    LddpFit lddp;
    if (p.lddp_in) {
      lddp = std::move(*p.lddp_in);
    } else {
      McmcConfig mc = p.lddp_cfg;
      lddp = fit_lddp(records, p.med_design, LddpPriors{}, mc);
    }
    AftPrior prior = AftPrior::default_for(ColumnLayout::build(p.out_design).n_cols);
    AftFit aft = fit_aft_bayes(records, p.out_design, prior, p.aft_cfg);
    Eigen::VectorXd grid = default_mediator_grid(records, p.grid_points);

    auto& vec = cells["Density"];
    vec.resize(n_strata);
    std::vector<std::vector<double>> stratum_draws(n_strata);
    for (int c = 0; c < n_strata; ++c) {
      auto dens = eval_density(lddp, strata[c], grid, p.threads);
      for (Eigen::Index t = 0; t < dens.density.rows(); ++t)
        for (Eigen::Index g = 0; g < grid.size(); ++g)
          grid_out << dens.stratum << "," << t << "," << format_double(grid(g)) << ","
                   << format_double(dens.density(t, g)) << "," << format_double(dens.cdf(t, g))
                   << "\n";
      if (!available[c]) continue;
      auto draws = rd_conditional(dens, aft, strata[c], p.rd_draws, substream(p.seed, {3}),
                                  p.threads);
      vec[c].available = true;
      vec[c].rd = interval_summary(draws);
      vec[c].reduction = percent_reduction(disp_draws_by_stratum[c], draws);
      vec[c].draws = draws;
      stratum_draws[c] = std::move(draws);
    }
    auto& marg = marginal["Density"];
    if (marginal_ok) {
      std::vector<std::vector<double>> kept;
      std::vector<double> kept_w;
      for (int c = 0; c < n_strata; ++c) {
        if (weights(c) <= 0.0) continue;
        kept.push_back(stratum_draws[c]);
        kept_w.push_back(weights(c));
      }
      Eigen::VectorXd wv = Eigen::Map<Eigen::VectorXd>(kept_w.data(), kept_w.size());
      auto draws = rd_marginal(kept, wv);
      marg.available = true;
      marg.rd = interval_summary(draws);
      marg.reduction = percent_reduction(disp_marginal, draws);
      marg.draws = std::move(draws);
    }
  }

  // Non-Bayesian methods: point estimates on the full data, intervals from a
  // shared nonparametric bootstrap. All models are refit on each resample.
  struct PointMethod {
    std::string name;
    std::function<std::vector<double>(std::span<const SubjectRecord>, std::uint64_t)> run;
  };
  std::vector<PointMethod> point_methods;
  if (want_linear)
    point_methods.push_back(
        {"Linear", [&](std::span<const SubjectRecord> recs, std::uint64_t seed) {
           auto lin = fit_linear_mediator(recs, p.med_design);
           AftFit aft = fit_aft_mle(recs, p.out_design);
           require(aft.converged, "linear method: outcome fit did not converge");
           std::vector<double> rd(n_strata, 0.0);
           for (int c = 0; c < n_strata; ++c)
             if (available[c])
               rd[c] = rd_linear_counterfactual(lin, aft, strata[c], p.linear_draws,
                                                substream(seed, {4}));
           return rd;
         }});
  if (want_bcl)
    point_methods.push_back(
        {"BCL", [&](std::span<const SubjectRecord> recs, std::uint64_t) {
           auto bcl = fit_bcl(recs, p.cutpoints, p.med_design);
           AftFit aft = fit_aft_mle(recs, p.cat_design);
           require(aft.converged, "category method: outcome fit did not converge");
           std::vector<double> rd(n_strata, 0.0);
           for (int c = 0; c < n_strata; ++c)
             if (available[c]) rd[c] = rd_bcl(bcl, aft, strata[c]);
           return rd;
         }});
  if (want_trad)
    point_methods.push_back(
        {"Traditional", [&](std::span<const SubjectRecord> recs, std::uint64_t) {
           double rd = rd_difference(recs, p.out_design);
           return std::vector<double>(n_strata, rd);
         }});

  if (!point_methods.empty()) {
    const int n_pm = static_cast<int>(point_methods.size());
    // full-data points, plus the mediator-free MLE for percent reduction
    std::vector<std::vector<double>> point(n_pm);
    for (int m = 0; m < n_pm; ++m)
      point[m] = point_methods[m].run(records, substream(p.seed, {6}));
    AftFit disp_mle = fit_aft_mle(records, p.disp_design);
    require(disp_mle.converged, "disparity model did not converge");
    std::vector<double> disp_point(n_strata);
    for (int c = 0; c < n_strata; ++c)
      disp_point[c] = disparity_point(disp_mle, strata[c].levels);

    const int B = p.bootstrap;
    // [method][replicate][stratum]; one extra row per replicate for disparity
    std::vector<std::vector<std::vector<double>>> boot(
        n_pm, std::vector<std::vector<double>>(B));
    std::vector<std::vector<double>> boot_disp(B);
    parallel_for(static_cast<std::size_t>(B), p.threads, [&](std::size_t b) {
      for (int attempt = 0;; ++attempt) {
        if (attempt >= 20) fail("bootstrap replicate failed to converge");
        std::uint64_t rep_seed = substream(p.seed, {7, b, static_cast<std::uint64_t>(attempt)});
        Rng rng(rep_seed);
        std::vector<SubjectRecord> sample;
        sample.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
          sample.push_back(records[static_cast<std::size_t>(rng.uniform() * static_cast<double>(n))]);
        try {
          std::vector<std::vector<double>> rd(n_pm);
          for (int m = 0; m < n_pm; ++m) rd[m] = point_methods[m].run(sample, rep_seed);
          AftFit dfit = fit_aft_mle(sample, p.disp_design);
          require(dfit.converged, "disparity model did not converge");
          std::vector<double> dp(n_strata);
          for (int c = 0; c < n_strata; ++c) dp[c] = disparity_point(dfit, strata[c].levels);
          for (int m = 0; m < n_pm; ++m) boot[m][b] = std::move(rd[m]);
          boot_disp[b] = std::move(dp);
          return;
        } catch (const Error&) {
          continue;
        }
      }
    });

    auto summarize = [&](const std::vector<double>& reps, double pt) {
      IntervalSummary s;
      s.point = pt;
      s.lower = quantile_type7(reps, 0.025);
      s.upper = quantile_type7(reps, 0.975);
      s.kind = IntervalKind::bootstrap;
      return s;
    };
    for (int m = 0; m < n_pm; ++m) {
      auto& vec = cells[point_methods[m].name];
      vec.resize(n_strata);
      for (int c = 0; c < n_strata; ++c) {
        if (!available[c]) continue;
        std::vector<double> reps(B), red(B);
        for (int b = 0; b < B; ++b) {
          reps[b] = boot[m][b][c];
          red[b] = (boot_disp[b][c] - reps[b]) / boot_disp[b][c];
        }
        vec[c].available = true;
        vec[c].rd = summarize(reps, point[m][c]);
        vec[c].reduction = summarize(red, (disp_point[c] - point[m][c]) / disp_point[c]);
        vec[c].draws = std::move(reps);
      }
      auto& marg = marginal[point_methods[m].name];
      if (marginal_ok) {
        auto weight_sum = [&](const std::vector<double>& per_stratum) {
          double s = 0.0;
          for (int c = 0; c < n_strata; ++c) s += weights(c) * per_stratum[c];
          return s;
        };
        std::vector<double> reps(B), red(B);
        for (int b = 0; b < B; ++b) {
          reps[b] = weight_sum(boot[m][b]);
          double d = weight_sum(boot_disp[b]);
          red[b] = (d - reps[b]) / d;
        }
        double pt = weight_sum(point[m]);
        double dpt = weight_sum(disp_point);
        marg.available = true;
        marg.rd = summarize(reps, pt);
        marg.reduction = summarize(red, (dpt - pt) / dpt);
        marg.draws = std::move(reps);
      }
    }
  }

  // ---- write outputs ----
  const std::string marginal_label = "(marginal)";
  {
    std::ofstream out(p.dir / "rd.csv");
    if (!out) fail("cannot write rd.csv");
    out << "stratum,method,estimate,lower,upper\n";
    for (auto m : p.methods) {
      const char* name = method_name(m);
      const auto& vec = cells.at(name);
      for (int c = 0; c < n_strata; ++c)
        write_summary_row(out, strata[c].label(schema), name, vec[c]);
      write_summary_row(out, marginal_label, name, marginal.at(name));
    }
    outputs.push_back("rd.csv");
  }
  {
    std::ofstream out(p.dir / "disparity.csv");
    if (!out) fail("cannot write disparity.csv");
    out << "stratum,estimate,lower,upper\n";
    for (int c = 0; c < n_strata; ++c) {
      auto s = interval_summary(disp_draws_by_stratum[c]);
      out << csv_quote(strata[c].label(schema)) << "," << format_double(s.point) << ","
          << format_double(s.lower) << "," << format_double(s.upper) << "\n";
    }
    auto s = interval_summary(disp_marginal);
    out << csv_quote(marginal_label) << "," << format_double(s.point) << ","
        << format_double(s.lower) << "," << format_double(s.upper) << "\n";
    outputs.push_back("disparity.csv");
  }
  {
    std::ofstream out(p.dir / "reduction.csv");
    if (!out) fail("cannot write reduction.csv");
    out << "stratum,method,estimate,lower,upper\n";
    for (auto m : p.methods) {
      const char* name = method_name(m);
      const auto& vec = cells.at(name);
      for (int c = 0; c < n_strata; ++c) {
        MethodCell red = vec[c];
        red.rd = red.reduction;
        write_summary_row(out, strata[c].label(schema), name, red);
      }
      MethodCell red = marginal.at(name);
      red.rd = red.reduction;
      write_summary_row(out, marginal_label, name, red);
    }
    outputs.push_back("reduction.csv");
  }
  {
    std::ofstream out(p.dir / "rd_draws.csv");
    if (!out) fail("cannot write rd_draws.csv");
    out << "stratum,method,draw,value\n";
    for (auto m : p.methods) {
      const char* name = method_name(m);
      const auto& vec = cells.at(name);
      for (int c = 0; c < n_strata; ++c)
        for (std::size_t t = 0; t < vec[c].draws.size(); ++t)
          out << csv_quote(strata[c].label(schema)) << "," << name << "," << t << ","
              << format_double(vec[c].draws[t]) << "\n";
      const auto& marg = marginal.at(name);
      for (std::size_t t = 0; t < marg.draws.size(); ++t)
        out << csv_quote(marginal_label) << "," << name << "," << t << ","
            << format_double(marg.draws[t]) << "\n";
    }
    outputs.push_back("rd_draws.csv");
  }
  write_manifest(p.dir, "analyze", p.resolved, outputs);
  return 0;
}

// ---- lrt -----------------------------------------------------------------------

struct LrtArgs {
  std::string config_path, out_dir = ".", data_path;
  std::vector<std::string> interactions;
  int poly = 1;
  double center = 0.0;
  bool no_group_mediator = false;
};

void add_lrt(CLI::App& app, LrtArgs& a, CLI::App** sub) {
  CLI::App* c = app.add_subcommand(
      "lrt", "likelihood-ratio tests dropping each interaction block from the outcome model");
  c->add_option("--config", a.config_path, "JSON config file; flags override its keys");
  c->add_option("--out-dir", a.out_dir, "output directory");
  c->add_option("--data", a.data_path, "dataset CSV: time,event,group,mediator[,factor...]");
  c->add_option("--interactions", a.interactions,
                "candidate blocks (group:FACTOR / mediator:FACTOR); default: all factors, both kinds")
      ->delimiter(',');
  c->add_option("--poly", a.poly, "polynomial degree of the mediator in the outcome model");
  c->add_option("--center-mediator", a.center, "centering constant for mediator polynomial terms");
  c->add_flag("--no-group-mediator", a.no_group_mediator,
              "drop the group x mediator interaction from the outcome model");
  *sub = c;
}

struct LrtPlan {
  densmed::Dataset data;
  densmed::DesignMatrixSpec full;
  InteractionSet inter;
  std::filesystem::path dir;
  json resolved;
};

LrtPlan resolve_lrt(const CLI::App& cmd, LrtArgs& a) {
  using namespace densmed;
  json cfg = load_config(a.config_path);
  check_keys(cfg, {"data", "out_dir", "interactions", "poly", "center_mediator", "group_mediator"},
             "lrt config");
  std::string data = resolve(cmd.count("--data") > 0, a.data_path, cfg, "data", std::string());
  if (data.empty()) usage_fail("a dataset is required (--data or config key 'data')");
  Dataset ds = load_dataset(data);
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << "\n";
  int poly = resolve(cmd.count("--poly") > 0, a.poly, cfg, "poly", 1);
  if (poly < 1) usage_fail("poly must be >= 1");
  double center = resolve(cmd.count("--center-mediator") > 0, a.center, cfg, "center_mediator",
                          0.0);
  bool group_med = resolve(false, true, cfg, "group_mediator", true);
  if (cmd.count("--no-group-mediator") > 0) group_med = false;

  auto inter_tokens = resolve(cmd.count("--interactions") > 0, a.interactions, cfg,
                              "interactions", std::vector<std::string>{});
  InteractionSet inter;
  if (inter_tokens.empty()) {
    inter.group_factors = all_factor_indices(ds.schema);
    inter.mediator_factors = all_factor_indices(ds.schema);
  } else {
    inter = parse_interactions(inter_tokens, ds.schema);
  }
  if (inter.group_factors.empty() && inter.mediator_factors.empty())
    usage_fail("no candidate interaction blocks");

  LrtPlan plan;
  plan.data = std::move(ds);
  plan.inter = inter;
  plan.full.schema = plan.data.schema;
  plan.full.basis = MediatorBasis::polynomial(poly, center);
  plan.full.group_mediator = group_med;
  plan.full.group_covariate_factors = inter.group_factors;
  plan.full.mediator_covariate_factors = inter.mediator_factors;
  plan.full.validate();
  plan.dir = prepare_out_dir(resolve(cmd.count("--out-dir") > 0, a.out_dir, cfg, "out_dir",
                                     std::string(".")));
  plan.resolved["data"] = data;
  plan.resolved["poly"] = poly;
  plan.resolved["center_mediator"] = center;
  plan.resolved["group_mediator"] = group_med;
  plan.resolved["interactions"] = inter_tokens;
  return plan;
}

int run_lrt(LrtPlan& plan) {
  using namespace densmed;
  const Dataset& ds = plan.data;
  const InteractionSet& inter = plan.inter;
  const auto& dir = plan.dir;

  AftFit full_fit = fit_aft_mle(ds.records, plan.full);
  require(full_fit.converged, "full outcome model did not converge");

  // Blocks in a fixed order: group interactions by factor index, then
  // mediator interactions.
  struct Block {
    std::string label;
    bool group_kind;
    int factor;
  };
  std::vector<Block> blocks;
  {
    auto g = inter.group_factors;
    std::sort(g.begin(), g.end());
    for (int f : g) blocks.push_back({"group:" + ds.schema.factors[f].name, true, f});
    auto m = inter.mediator_factors;
    std::sort(m.begin(), m.end());
    for (int f : m) blocks.push_back({"mediator:" + ds.schema.factors[f].name, false, f});
  }

  std::ofstream out(dir / "lrt.csv");
  if (!out) fail("cannot write lrt.csv");
  out << "block,statistic,df,p_value,loglik_full,loglik_nested\n";
  for (const auto& b : blocks) {
    DesignMatrixSpec nested = plan.full;
    auto drop = [&](std::vector<int>& v) { v.erase(std::remove(v.begin(), v.end(), b.factor), v.end()); };
    if (b.group_kind)
      drop(nested.group_covariate_factors);
    else
      drop(nested.mediator_covariate_factors);
    AftFit nested_fit = fit_aft_mle(ds.records, nested);
    require(nested_fit.converged, "nested outcome model did not converge (" + b.label + ")");
    LrtResult r = lrt_compare(full_fit, nested_fit);
    out << b.label << "," << format_double(r.statistic) << "," << r.df << ","
        << format_double(r.p_value) << "," << format_double(r.loglik_full) << ","
        << format_double(r.loglik_nested) << "\n";
  }
  out.close();
  write_manifest(dir, "lrt", plan.resolved, {"lrt.csv"});
  return 0;
}

// ---- density-grid ----------------------------------------------------------------

struct GridArgs {
  std::string config_path, out_dir = ".", data_path, save_fit;
  std::uint64_t seed = 0;
  int threads = 1;
  int grid_points = 200;
};

void add_grid(CLI::App& app, GridArgs& a, CLI::App** sub) {
  CLI::App* c = app.add_subcommand(
      "density-grid", "fit the mediator density model and export per-stratum grids");
  c->add_option("--config", a.config_path, "JSON config file; flags override its keys");
  c->add_option("--out-dir", a.out_dir, "output directory");
  c->add_option("--data", a.data_path, "dataset CSV: time,event,group,mediator[,factor...]");
  c->add_option("--seed", a.seed, "root RNG seed (required here or in the config)");
  c->add_option("--threads", a.threads, "worker threads; 0 = all cores");
  c->add_option("--grid-points", a.grid_points, "mediator grid size");
  c->add_option("--save-fit", a.save_fit, "also save the fitted model as JSON for reuse");
  *sub = c;
}

struct GridPlan {
  densmed::Dataset data;
  densmed::McmcConfig mcmc;
  int grid_points = 200, threads = 1;
  std::string save_fit;
  std::filesystem::path dir;
  json resolved;
};

GridPlan resolve_grid(const CLI::App& cmd, GridArgs& a) {
  using namespace densmed;
  json cfg = load_config(a.config_path);
  check_keys(cfg, {"data", "out_dir", "seed", "threads", "grid_points", "save_fit", "lddp"},
             "density-grid config");
  std::string data = resolve(cmd.count("--data") > 0, a.data_path, cfg, "data", std::string());
  if (data.empty()) usage_fail("a dataset is required (--data or config key 'data')");
  Dataset ds = load_dataset(data);
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << "\n";
  std::uint64_t seed = resolve_seed(cmd.count("--seed") > 0, a.seed, cfg);
  int threads = resolve_threads(cmd.count("--threads") > 0, a.threads, cfg);
  int grid_points = resolve(cmd.count("--grid-points") > 0, a.grid_points, cfg, "grid_points",
                            200);
  if (grid_points < 2) usage_fail("grid_points must be >= 2");
  GridPlan plan;
  plan.mcmc = lddp_config_from(cfg, seed);
  plan.mcmc.validate();
  plan.grid_points = grid_points;
  plan.threads = threads;
  plan.save_fit = resolve(cmd.count("--save-fit") > 0, a.save_fit, cfg, "save_fit",
                          std::string());
  plan.dir = prepare_out_dir(resolve(cmd.count("--out-dir") > 0, a.out_dir, cfg, "out_dir",
                                     std::string(".")));
  plan.resolved["data"] = data;
  plan.resolved["seed"] = seed;
  plan.resolved["threads"] = threads;
  plan.resolved["grid_points"] = grid_points;
  plan.resolved["save_fit"] = plan.save_fit;
  plan.resolved["lddp"] = {{"truncation", plan.mcmc.truncation},
                           {"iterations", plan.mcmc.iterations},
                           {"burn_in", plan.mcmc.burn_in},
                           {"thinning", plan.mcmc.thinning}};
  plan.data = std::move(ds);
  return plan;
}

int run_grid(GridPlan& plan) {
  using namespace densmed;
  const Dataset& ds = plan.data;

  DesignMatrixSpec med;
  med.schema = ds.schema;
  med.basis = MediatorBasis::none();
  LddpFit fit = fit_lddp(ds.records, med, LddpPriors{}, plan.mcmc);
  Eigen::VectorXd grid = default_mediator_grid(ds.records, plan.grid_points);

  std::vector<std::string> outputs{"density_grid.csv"};
  std::ofstream out(plan.dir / "density_grid.csv");
  if (!out) fail("cannot write density grid file");
  out << "stratum,iteration,m,f,F\n";
  for (const auto& stratum : enumerate_strata(ds.schema)) {
    auto dens = eval_density(fit, stratum, grid, plan.threads);
    for (Eigen::Index t = 0; t < dens.density.rows(); ++t)
      for (Eigen::Index g = 0; g < grid.size(); ++g)
        out << dens.stratum << "," << t << "," << format_double(grid(g)) << ","
            << format_double(dens.density(t, g)) << "," << format_double(dens.cdf(t, g)) << "\n";
  }
  out.close();
  if (!plan.save_fit.empty()) {
    write_lddp_fit(plan.save_fit, fit);
    outputs.push_back(plan.save_fit);
  }
  write_manifest(plan.dir, "density-grid", plan.resolved, outputs);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"residual disparity under mediator-distribution matching"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SimulateArgs sim_args;
  AnalyzeArgs an_args;
  LrtArgs lrt_args;
  GridArgs grid_args;
  CLI::App *sim_cmd = nullptr, *an_cmd = nullptr, *lrt_cmd = nullptr, *grid_cmd = nullptr;
  add_simulate(app, sim_args, &sim_cmd);
  add_analyze(app, an_args, &an_cmd);
  add_lrt(app, lrt_args, &lrt_cmd);
  add_grid(app, grid_args, &grid_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim_cmd->parsed()) return run_simulate(*sim_cmd, sim_args);
    if (lrt_cmd->parsed()) {
      LrtPlan plan = as_usage([&] { return resolve_lrt(*lrt_cmd, lrt_args); });
      return run_lrt(plan);
    }
    if (grid_cmd->parsed()) {
      GridPlan plan = as_usage([&] { return resolve_grid(*grid_cmd, grid_args); });
      return run_grid(plan);
    }
    if (an_cmd->parsed()) {
      AnalyzePlan plan = as_usage([&] { return resolve_analyze(*an_cmd, an_args); });
      return run_analyze(plan);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const densmed::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
