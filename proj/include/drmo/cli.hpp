#ifndef DRMO_CLI_HPP
#define DRMO_CLI_HPP

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "drmo/common.hpp"
#include "drmo/data_model.hpp"
#include "drmo/io.hpp"
#include "drmo/simulate.hpp"

namespace drmo {

inline constexpr const char* kProjectName = "drmo";
inline constexpr const char* kProjectVersion = "0.1.0";

namespace cli {

// Flat key-value config with unknown-key rejection. File values are applied
// first, explicitly passed CLI flags win.
class ConfigMap {
 public:
  template <typename T>
  void field(const std::string& key, T& ref) {
    setters_[key] = [&ref](const Json& v) { ref = v.get<T>(); };
    getters_[key] = [&ref]() { return Json(ref); };
  }

  void field_enum(const std::string& key, std::string& ref,
                  std::function<void(const std::string&)> validate) {
    setters_[key] = [&ref, validate](const Json& v) {
      ref = v.get<std::string>();
      validate(ref);
    };
    getters_[key] = [&ref]() { return Json(ref); };
  }

  void apply(const Json& file) {
    if (!file.is_object()) throw SchemaError("config file must hold a JSON object");
    for (const auto& [key, value] : file.items()) {
      const auto it = setters_.find(key);
      if (it == setters_.end()) throw SchemaError("unknown config key '" + key + "'");
      try {
        it->second(value);
      } catch (const Json::exception& e) {
        throw SchemaError("config key '" + key + "': " + e.what());
      }
      seen_.insert(key);
    }
  }

  void mark_seen(const std::string& key) { seen_.insert(key); }
  bool seen(const std::string& key) const { return seen_.count(key) > 0; }

  Json dump() const {
    Json j;
    for (const auto& [key, getter] : getters_) j[key] = getter();
    return j;
  }

 private:
  std::map<std::string, std::function<void(const Json&)>> setters_;
  std::map<std::string, std::function<Json()>> getters_;
  std::set<std::string> seen_;
};

// Copies a CLI flag's parsed value over the config-file value when the flag
// was actually given on the command line.
struct FlagMerger {
  std::vector<std::pair<CLI::Option*, std::function<void()>>> merges;
  std::vector<std::pair<CLI::Option*, std::string>> names;

  template <typename T>
  void bind(CLI::Option* opt, T& cli_value, T& target, ConfigMap& cfg, const std::string& key) {
    merges.emplace_back(opt, [&cli_value, &target]() { target = cli_value; });
    names.emplace_back(opt, key);
    (void)cfg;
  }

  void apply(ConfigMap& cfg) {
    for (std::size_t i = 0; i < merges.size(); ++i) {
      if (merges[i].first->count() > 0) {
        merges[i].second();
        cfg.mark_seen(names[i].second);
      }
    }
  }
};

inline void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out + "': " + ec.message());
}

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline std::optional<double> parse_bandwidth(const std::string& text) {
  if (text == "silverman") return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0' || !(v > 0.0)) {
    throw ParameterError("bandwidth must be 'silverman' or a positive number, got '" + text + "'");
  }
  return v;
}

inline char parse_delimiter(const std::string& text) {
  if (text.empty() || text == "auto") return '\0';
  if (text == "tab" || text == "\\t") return '\t';
  if (text.size() == 1) return text[0];
  throw ParameterError("delimiter must be a single character, 'tab', or 'auto'");
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOpts {
  int p = 500, n = 400, m = 50, d = 5, active = 20;
  std::string scenario = "mean_shift";
  double theta_max = 1.0, beta_r = 0.5;
  int pilot_cells = 1000;
  bool lognormal_log_scale = true;
  int reps = 1;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out = "out";
  std::string delimiter = "auto";
  bool verbose = false;
};

inline void register_simulate_keys(SimulateOpts& o, ConfigMap& cfg) {
  cfg.field("p", o.p);
  cfg.field("n", o.n);
  cfg.field("m", o.m);
  cfg.field("d", o.d);
  cfg.field("active_count", o.active);
  cfg.field_enum("scenario", o.scenario, [](const std::string& s) { scenario_from_name(s); });
  cfg.field("theta_max", o.theta_max);
  cfg.field("beta_r", o.beta_r);
  cfg.field("pilot_cells", o.pilot_cells);
  cfg.field("lognormal_location_on_log_scale", o.lognormal_log_scale);
  cfg.field("reps", o.reps);
  cfg.field("seed", o.seed);
  cfg.field("threads", o.threads);
  cfg.field("out", o.out);
  cfg.field("delimiter", o.delimiter);
}

inline DgpConfig dgp_from_opts(const SimulateOpts& o, const ConfigMap& cfg) {
  DgpConfig dgp;
  dgp.p = o.p;
  dgp.n = o.n;
  dgp.m = o.m;
  dgp.d = o.d;
  dgp.active_count = o.active;
  dgp.scenario = scenario_from_name(o.scenario);
  apply_scenario_signal_defaults(dgp);
  if (cfg.seen("theta_max")) dgp.theta_max = o.theta_max;
  if (cfg.seen("beta_r")) dgp.beta_r = o.beta_r;
  dgp.seed = o.seed;
  dgp.pilot_cells = o.pilot_cells;
  dgp.lognormal_location_on_log_scale = o.lognormal_log_scale;
  return dgp;
}

inline Json truth_to_json(const DgpData& data, const DgpConfig& dgp) {
  Json j;
  j["active"] = data.active;
  std::vector<std::string> names;
  for (int idx : data.active) names.push_back(data.table.outcome_names[static_cast<std::size_t>(idx)]);
  j["active_names"] = names;
  j["signal"] = io_detail::vec_to_json(data.signal);
  j["delta"] = io_detail::vec_to_json(data.delta);
  j["nominal_effect"] = io_detail::vec_to_json(nominal_effect(data, dgp));
  j["resample_warnings"] = data.resample_warnings;
  j["scenario"] = scenario_name(dgp.scenario);
  j["seed"] = dgp.seed;
  j["n"] = dgp.n;
  j["m"] = dgp.m;
  j["p"] = dgp.p;
  return j;
}

inline int cmd_simulate(const SimulateOpts& opts, const ConfigMap& cfg) {
  if (opts.reps < 1) throw ParameterError("--reps must be >= 1");
  ensure_out_dir(opts.out);
  const char delim = parse_delimiter(opts.delimiter);
  for (int rep = 0; rep < opts.reps; ++rep) {
    DgpConfig dgp = dgp_from_opts(opts, cfg);
    dgp.seed = opts.seed + static_cast<std::uint64_t>(rep);
    const DgpData data = generate_dgp(dgp);
    std::string dir = opts.out;
    if (opts.reps > 1) {
      char sub[32];
      std::snprintf(sub, sizeof(sub), "rep_%04d", rep);
      dir = join_path(opts.out, sub);
      ensure_out_dir(dir);
    }
    write_observations(data.table, join_path(dir, "observations.tsv"), delim);
    io_detail::write_text(join_path(dir, "truth.json"), truth_to_json(data, dgp).dump(2) + "\n");
    if (opts.verbose) {
      std::cout << "wrote " << dir << ": n=" << data.table.n() << " p=" << data.table.p()
                << " active=" << data.active.size() << "\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// estimate

struct EstimateOpts {
  std::string input;
  std::string treatment_col = "A";
  std::vector<std::string> covariate_cols{"x*"};
  std::vector<std::string> outcome_cols{"g*"};
  std::string delimiter = "auto";
  std::string estimand = "ate";
  double rho = 0.5;
  int crossfit_k = 0;
  double epsilon = 0.01;
  int cdf_grid_points = 41;
  std::string bandwidth = "silverman";
  std::string outcome_family = "poisson_log";
  std::string y2_family = "gaussian_identity";
  double density_floor = 0.01;
  double null_value = 0.0;
  std::vector<double> null_values;  // per-outcome override
  bool write_influence_files = true;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out = "out";
  bool verbose = false;
};

inline void register_estimate_keys(EstimateOpts& o, ConfigMap& cfg) {
  cfg.field("input", o.input);
  cfg.field("treatment_col", o.treatment_col);
  cfg.field("covariate_cols", o.covariate_cols);
  cfg.field("outcome_cols", o.outcome_cols);
  cfg.field("delimiter", o.delimiter);
  cfg.field_enum("estimand", o.estimand, [](const std::string& s) { estimand_from_name(s); });
  cfg.field("rho", o.rho);
  cfg.field("crossfit_k", o.crossfit_k);
  cfg.field("epsilon", o.epsilon);
  cfg.field("cdf_grid_points", o.cdf_grid_points);
  cfg.field("bandwidth", o.bandwidth);
  cfg.field_enum("outcome_family", o.outcome_family,
                 [](const std::string& s) { family_from_name(s); });
  cfg.field_enum("y2_family", o.y2_family, [](const std::string& s) { family_from_name(s); });
  cfg.field("density_floor", o.density_floor);
  cfg.field("null_value", o.null_value);
  cfg.field("null_values", o.null_values);
  cfg.field("write_influence", o.write_influence_files);
  cfg.field("seed", o.seed);
  cfg.field("threads", o.threads);
  cfg.field("out", o.out);
}

inline int cmd_estimate(const EstimateOpts& opts) {
  if (opts.input.empty()) throw ParameterError("--input is required");
  TableSchema schema;
  schema.treatment_col = opts.treatment_col;
  schema.covariate_cols = opts.covariate_cols;
  schema.outcome_cols = opts.outcome_cols;
  const ObservationTable table =
      load_observations(opts.input, schema, parse_delimiter(opts.delimiter));

  NuisanceConfig ncfg;
  ncfg.epsilon = opts.epsilon;
  ncfg.crossfit_k = opts.crossfit_k;
  ncfg.cdf_grid_points = opts.cdf_grid_points;
  ncfg.bandwidth = parse_bandwidth(opts.bandwidth);
  ncfg.outcome_family = family_from_name(opts.outcome_family);
  ncfg.y2_family = family_from_name(opts.y2_family);
  ncfg.density_floor = opts.density_floor;
  ncfg.seed = opts.seed;

  const EstimandKind kind = estimand_from_name(opts.estimand);
  const NuisanceNeeds needs = NuisanceNeeds::for_estimands({kind});
  const int threads = resolve_threads(opts.threads);
  const NuisanceFit nuisance = fit_nuisance(table, ncfg, needs, threads);

  Vec nulls = Vec::Constant(table.p(), opts.null_value);
  if (!opts.null_values.empty()) {
    if (static_cast<int>(opts.null_values.size()) != table.p()) {
      throw ParameterError("null_values must list one value per outcome (" +
                           std::to_string(table.p()) + ")");
    }
    nulls = Eigen::Map<const Vec>(opts.null_values.data(), table.p());
  }

  QuantileOptions qopts;
  qopts.rho = opts.rho;
  qopts.bandwidth = ncfg.bandwidth;
  qopts.density_floor = ncfg.density_floor;
  EstimateOutput output;
  switch (kind) {
    case EstimandKind::kAte: output = estimate_ate(table, nuisance, &nulls, threads); break;
    case EstimandKind::kSte: output = estimate_ste(table, nuisance, &nulls, threads); break;
    case EstimandKind::kQte: output = estimate_qte(table, nuisance, qopts, &nulls, threads); break;
    case EstimandKind::kSqte: output = estimate_sqte(table, nuisance, qopts, &nulls, threads); break;
  }

  ensure_out_dir(opts.out);
  write_result_tsv(output.result, join_path(opts.out, "result.tsv"));
  write_result_json(output.result, join_path(opts.out, "result.json"));
  if (opts.write_influence_files) {
    write_influence(output.influence, join_path(opts.out, "influence.bin"),
                    join_path(opts.out, "influence.json"), opts.seed);
  }
  int degenerate = 0;
  for (const auto& f : output.result.flags) degenerate += f.degenerate ? 1 : 0;
  if (degenerate > 0) {
    std::cerr << "warning: " << degenerate << " of " << table.p()
              << " outcomes flagged degenerate\n";
  }
  if (opts.verbose) {
    std::cout << "estimated " << opts.estimand << " for " << table.p() << " outcomes (n="
              << table.n() << ")\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// test

struct TestOpts {
  std::string results;
  std::string influence;
  std::string influence_sidecar;
  std::string method = "stepdown";
  double fdp_threshold = 0.1;
  double alpha = 0.05;
  int bootstrap = 1000;
  double screen = 0.01;
  double q = 0.05;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out = "out";
  bool verbose = false;
};

inline void register_test_keys(TestOpts& o, ConfigMap& cfg) {
  cfg.field("results", o.results);
  cfg.field("influence", o.influence);
  cfg.field("influence_sidecar", o.influence_sidecar);
  cfg.field_enum("method", o.method, [](const std::string& s) { method_from_name(s); });
  cfg.field("fdp_threshold", o.fdp_threshold);
  cfg.field("alpha", o.alpha);
  cfg.field("bootstrap", o.bootstrap);
  cfg.field("screen", o.screen);
  cfg.field("q", o.q);
  cfg.field("seed", o.seed);
  cfg.field("threads", o.threads);
  cfg.field("out", o.out);
}

inline int cmd_test(const TestOpts& opts) {
  if (opts.results.empty()) throw ParameterError("--results is required");
  if (opts.influence.empty()) throw ParameterError("--influence is required");
  if (!std::filesystem::exists(opts.influence)) {
    throw IoError("cannot open '" + opts.influence + "'");
  }
  const std::string sidecar = opts.influence_sidecar.empty()
                                  ? std::filesystem::path(opts.influence).replace_extension(".json").string()
                                  : opts.influence_sidecar;
  const EstimandResult result = read_result_json(opts.results);
  const InfluenceMatrix influence = read_influence(opts.influence, sidecar, result);
  const TestMethod method = method_from_name(opts.method);

  ensure_out_dir(opts.out);
  Json out_json;
  std::vector<int> discoveries;
  std::vector<int> candidates;
  switch (method) {
    case TestMethod::kStepdown: {
      StepdownParams params;
      params.c = opts.fdp_threshold;
      params.alpha = opts.alpha;
      params.bootstrap_b = opts.bootstrap;
      params.screen_cn = opts.screen;
      params.seed = opts.seed;
      const DiscoverySet set = stepdown_fdx(result, influence, params);
      discoveries = set.discoveries;
      candidates = set.candidate_set;
      out_json = discovery_to_json(set, result.outcome_names);
      out_json["method"] = "stepdown";
      break;
    }
    case TestMethod::kFwer: {
      candidates = testing_detail::candidate_set(result, opts.screen);
      discoveries = fwer_test(result, influence, opts.alpha, opts.bootstrap, opts.screen, opts.seed);
      out_json["method"] = "fwer";
      out_json["candidate_set"] = candidates;
      out_json["discoveries"] = discoveries;
      std::vector<std::string> names;
      for (int j : discoveries) names.push_back(result.outcome_names[static_cast<std::size_t>(j)]);
      out_json["discovery_names"] = names;
      out_json["params"] = {{"alpha", opts.alpha},
                            {"bootstrap_b", opts.bootstrap},
                            {"screen_cn", opts.screen},
                            {"seed", opts.seed}};
      break;
    }
    case TestMethod::kBh: {
      candidates = testing_detail::candidate_set(result, opts.screen);
      Vec pvals(static_cast<Eigen::Index>(candidates.size()));
      for (std::size_t k = 0; k < candidates.size(); ++k) {
        pvals[static_cast<Eigen::Index>(k)] = two_sided_pvalue(result.t[candidates[k]]);
      }
      if (!candidates.empty()) {
        for (int idx : bh_procedure(pvals, opts.q)) {
          discoveries.push_back(candidates[static_cast<std::size_t>(idx)]);
        }
      }
      out_json["method"] = "bh";
      out_json["candidate_set"] = candidates;
      out_json["discoveries"] = discoveries;
      std::vector<std::string> names;
      for (int j : discoveries) names.push_back(result.outcome_names[static_cast<std::size_t>(j)]);
      out_json["discovery_names"] = names;
      out_json["params"] = {{"q", opts.q}, {"screen_cn", opts.screen}};
      break;
    }
  }
  io_detail::write_text(join_path(opts.out, "discoveries.json"), out_json.dump(2) + "\n");
  write_decisions_tsv(result, candidates, discoveries, join_path(opts.out, "decisions.tsv"));
  if (opts.verbose) {
    std::cout << opts.method << ": " << discoveries.size() << " discoveries of "
              << result.tau.size() << " outcomes\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// benchmark

struct BenchmarkOpts {
  SimulateOpts sim;  // reuses the DGP keys; reps = replicates
  std::vector<int> n_values;
  std::vector<std::string> estimands{"ate"};
  std::vector<std::string> methods{"stepdown"};
  int crossfit_k = 0;
  double epsilon = 0.01;
  int cdf_grid_points = 41;
  std::string bandwidth = "silverman";
  std::string outcome_family = "poisson_log";
  std::string y2_family = "gaussian_identity";
  double density_floor = 0.01;
  double fdp_threshold = 0.1;
  double alpha = 0.05;
  int bootstrap = 1000;
  double screen = 0.01;
  double bh_q = 0.05;
  double rho = 0.5;
};

inline void register_benchmark_keys(BenchmarkOpts& o, ConfigMap& cfg) {
  register_simulate_keys(o.sim, cfg);
  cfg.field("n_values", o.n_values);
  cfg.field("estimands", o.estimands);
  cfg.field("methods", o.methods);
  cfg.field("crossfit_k", o.crossfit_k);
  cfg.field("epsilon", o.epsilon);
  cfg.field("cdf_grid_points", o.cdf_grid_points);
  cfg.field("bandwidth", o.bandwidth);
  cfg.field_enum("outcome_family", o.outcome_family,
                 [](const std::string& s) { family_from_name(s); });
  cfg.field_enum("y2_family", o.y2_family, [](const std::string& s) { family_from_name(s); });
  cfg.field("density_floor", o.density_floor);
  cfg.field("fdp_threshold", o.fdp_threshold);
  cfg.field("alpha", o.alpha);
  cfg.field("bootstrap", o.bootstrap);
  cfg.field("screen", o.screen);
  cfg.field("bh_q", o.bh_q);
  cfg.field("rho", o.rho);
}

inline ExperimentConfig experiment_from_opts(const BenchmarkOpts& o, const ConfigMap& cfg) {
  ExperimentConfig exp;
  exp.dgp = dgp_from_opts(o.sim, cfg);
  exp.replicates = o.sim.reps;
  exp.estimands.clear();
  for (const auto& name : o.estimands) exp.estimands.push_back(estimand_from_name(name));
  exp.methods.clear();
  for (const auto& name : o.methods) exp.methods.push_back(method_from_name(name));
  exp.nuisance.epsilon = o.epsilon;
  exp.nuisance.crossfit_k = o.crossfit_k;
  exp.nuisance.cdf_grid_points = o.cdf_grid_points;
  exp.nuisance.bandwidth = parse_bandwidth(o.bandwidth);
  exp.nuisance.outcome_family = family_from_name(o.outcome_family);
  exp.nuisance.y2_family = family_from_name(o.y2_family);
  exp.nuisance.density_floor = o.density_floor;
  exp.fdp_threshold = o.fdp_threshold;
  exp.alpha = o.alpha;
  exp.bootstrap_b = o.bootstrap;
  exp.screen_cn = o.screen;
  exp.bh_q = o.bh_q;
  exp.rho = o.rho;
  exp.threads = o.sim.threads;
  return exp;
}

inline int cmd_benchmark(const BenchmarkOpts& opts, const ConfigMap& cfg) {
  if (opts.sim.reps < 1) throw ParameterError("--reps must be >= 1");
  ExperimentConfig base = experiment_from_opts(opts, cfg);
  std::vector<int> n_values = opts.n_values.empty() ? std::vector<int>{base.dgp.n} : opts.n_values;

  ensure_out_dir(opts.sim.out);
  std::vector<std::pair<int, SimReport>> reports;
  Json timing = Json::array();
  for (int nv : n_values) {
    ExperimentConfig exp = base;
    exp.dgp.n = nv;
    const auto start = std::chrono::steady_clock::now();
    SimReport report = run_experiment(exp);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    timing.push_back({{"n", nv},
                      {"wall_s", wall},
                      {"dgp_s", report.phases.dgp_s},
                      {"nuisance_s", report.phases.nuisance_s},
                      {"estimation_s", report.phases.estimation_s},
                      {"testing_s", report.phases.testing_s}});
    reports.emplace_back(nv, std::move(report));
  }

  write_replicates_tsv(reports, join_path(opts.sim.out, "replicates.tsv"));
  Json agg;
  agg["long_running"] = is_long_running(base);
  agg["config"] = cfg.dump();
  Json runs = Json::array();
  for (const auto& [nv, report] : reports) {
    Json run = aggregate_to_json(report);
    run["n"] = nv;
    runs.push_back(run);
  }
  agg["runs"] = runs;
  io_detail::write_text(join_path(opts.sim.out, "aggregate.json"), agg.dump(2) + "\n");
  write_plot_data_tsv(reports, join_path(opts.sim.out, "plot_data.tsv"));
  // Wall-clock lives apart so every other artifact is byte-deterministic.
  io_detail::write_text(join_path(opts.sim.out, "timings.json"), timing.dump(2) + "\n");
  if (opts.sim.verbose) {
    for (const auto& [nv, report] : reports) {
      for (const auto& a : report.aggregates) {
        std::cout << "n=" << nv << " " << estimand_name(a.estimand) << "/" << method_name(a.method)
                  << ": fdx=" << a.fdx << " fdr=" << a.fdr << " power=" << a.mean_power << "\n";
      }
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------

inline int dispatch(int argc, const char* const* argv) {
  CLI::App app{std::string(kProjectName) +
               " - doubly robust treatment-effect estimation and FDX-controlled testing "
               "for many derived outcomes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kProjectVersion));

  // simulate ---------------------------------------------------------------
  SimulateOpts sim_base, sim_cli;
  ConfigMap sim_cfg;
  register_simulate_keys(sim_base, sim_cfg);
  FlagMerger sim_merge;
  std::string sim_config_path;
  bool sim_print = false;
  auto* sim = app.add_subcommand("simulate", "generate synthetic datasets with known truth");
  sim->add_option("--config", sim_config_path, "JSON config file");
  sim->add_flag("--print-config", sim_print, "print the effective config and exit");
  sim_merge.bind(sim->add_option("--p", sim_cli.p), sim_cli.p, sim_base.p, sim_cfg, "p");
  sim_merge.bind(sim->add_option("--n", sim_cli.n), sim_cli.n, sim_base.n, sim_cfg, "n");
  sim_merge.bind(sim->add_option("--m", sim_cli.m), sim_cli.m, sim_base.m, sim_cfg, "m");
  sim_merge.bind(sim->add_option("--d", sim_cli.d), sim_cli.d, sim_base.d, sim_cfg, "d");
  sim_merge.bind(sim->add_option("--active", sim_cli.active), sim_cli.active, sim_base.active,
                 sim_cfg, "active_count");
  sim_merge.bind(sim->add_option("--scenario", sim_cli.scenario), sim_cli.scenario,
                 sim_base.scenario, sim_cfg, "scenario");
  sim_merge.bind(sim->add_option("--theta-max", sim_cli.theta_max), sim_cli.theta_max,
                 sim_base.theta_max, sim_cfg, "theta_max");
  sim_merge.bind(sim->add_option("--beta-r", sim_cli.beta_r), sim_cli.beta_r, sim_base.beta_r,
                 sim_cfg, "beta_r");
  sim_merge.bind(sim->add_option("--pilot-cells", sim_cli.pilot_cells), sim_cli.pilot_cells,
                 sim_base.pilot_cells, sim_cfg, "pilot_cells");
  sim_merge.bind(sim->add_option("--reps", sim_cli.reps), sim_cli.reps, sim_base.reps, sim_cfg,
                 "reps");
  sim_merge.bind(sim->add_option("--seed", sim_cli.seed), sim_cli.seed, sim_base.seed, sim_cfg,
                 "seed");
  sim_merge.bind(sim->add_option("--threads", sim_cli.threads), sim_cli.threads, sim_base.threads,
                 sim_cfg, "threads");
  sim_merge.bind(sim->add_option("--out", sim_cli.out), sim_cli.out, sim_base.out, sim_cfg, "out");
  sim_merge.bind(sim->add_option("--delimiter", sim_cli.delimiter), sim_cli.delimiter,
                 sim_base.delimiter, sim_cfg, "delimiter");
  sim->add_flag("--verbose", sim_base.verbose);

  // estimate ---------------------------------------------------------------
  EstimateOpts est_base, est_cli;
  ConfigMap est_cfg;
  register_estimate_keys(est_base, est_cfg);
  FlagMerger est_merge;
  std::string est_config_path;
  bool est_print = false;
  auto* est = app.add_subcommand("estimate", "doubly robust effect estimates per outcome");
  est->add_option("--config", est_config_path, "JSON config file");
  est->add_flag("--print-config", est_print, "print the effective config and exit");
  est_merge.bind(est->add_option("--input", est_cli.input), est_cli.input, est_base.input, est_cfg,
                 "input");
  est_merge.bind(est->add_option("--treatment-col", est_cli.treatment_col), est_cli.treatment_col,
                 est_base.treatment_col, est_cfg, "treatment_col");
  est_merge.bind(est->add_option("--covariate-cols", est_cli.covariate_cols),
                 est_cli.covariate_cols, est_base.covariate_cols, est_cfg, "covariate_cols");
  est_merge.bind(est->add_option("--outcome-cols", est_cli.outcome_cols), est_cli.outcome_cols,
                 est_base.outcome_cols, est_cfg, "outcome_cols");
  est_merge.bind(est->add_option("--delimiter", est_cli.delimiter), est_cli.delimiter,
                 est_base.delimiter, est_cfg, "delimiter");
  est_merge.bind(est->add_option("--estimand", est_cli.estimand), est_cli.estimand,
                 est_base.estimand, est_cfg, "estimand");
  est_merge.bind(est->add_option("--rho", est_cli.rho), est_cli.rho, est_base.rho, est_cfg, "rho");
  est_merge.bind(est->add_option("--crossfit-k", est_cli.crossfit_k), est_cli.crossfit_k,
                 est_base.crossfit_k, est_cfg, "crossfit_k");
  est_merge.bind(est->add_option("--epsilon", est_cli.epsilon), est_cli.epsilon, est_base.epsilon,
                 est_cfg, "epsilon");
  est_merge.bind(est->add_option("--cdf-grid-points", est_cli.cdf_grid_points),
                 est_cli.cdf_grid_points, est_base.cdf_grid_points, est_cfg, "cdf_grid_points");
  est_merge.bind(est->add_option("--bandwidth", est_cli.bandwidth), est_cli.bandwidth,
                 est_base.bandwidth, est_cfg, "bandwidth");
  est_merge.bind(est->add_option("--outcome-family", est_cli.outcome_family),
                 est_cli.outcome_family, est_base.outcome_family, est_cfg, "outcome_family");
  est_merge.bind(est->add_option("--y2-family", est_cli.y2_family), est_cli.y2_family,
                 est_base.y2_family, est_cfg, "y2_family");
  est_merge.bind(est->add_option("--density-floor", est_cli.density_floor), est_cli.density_floor,
                 est_base.density_floor, est_cfg, "density_floor");
  est_merge.bind(est->add_option("--null-value", est_cli.null_value), est_cli.null_value,
                 est_base.null_value, est_cfg, "null_value");
  est_merge.bind(est->add_option("--write-influence", est_cli.write_influence_files),
                 est_cli.write_influence_files, est_base.write_influence_files, est_cfg,
                 "write_influence");
  est_merge.bind(est->add_option("--seed", est_cli.seed), est_cli.seed, est_base.seed, est_cfg,
                 "seed");
  est_merge.bind(est->add_option("--threads", est_cli.threads), est_cli.threads, est_base.threads,
                 est_cfg, "threads");
  est_merge.bind(est->add_option("--out", est_cli.out), est_cli.out, est_base.out, est_cfg, "out");
  est->add_flag("--verbose", est_base.verbose);

  // test ---------------------------------------------------------------
  TestOpts test_base, test_cli;
  ConfigMap test_cfg;
  register_test_keys(test_base, test_cfg);
  FlagMerger test_merge;
  std::string test_config_path;
  bool test_print = false;
  auto* tst = app.add_subcommand("test", "simultaneous testing on stored estimates");
  tst->add_option("--config", test_config_path, "JSON config file");
  tst->add_flag("--print-config", test_print, "print the effective config and exit");
  test_merge.bind(tst->add_option("--results", test_cli.results), test_cli.results,
                  test_base.results, test_cfg, "results");
  test_merge.bind(tst->add_option("--influence", test_cli.influence), test_cli.influence,
                  test_base.influence, test_cfg, "influence");
  test_merge.bind(tst->add_option("--influence-sidecar", test_cli.influence_sidecar),
                  test_cli.influence_sidecar, test_base.influence_sidecar, test_cfg,
                  "influence_sidecar");
  test_merge.bind(tst->add_option("--method", test_cli.method), test_cli.method, test_base.method,
                  test_cfg, "method");
  test_merge.bind(tst->add_option("--fdp-threshold", test_cli.fdp_threshold),
                  test_cli.fdp_threshold, test_base.fdp_threshold, test_cfg, "fdp_threshold");
  test_merge.bind(tst->add_option("--alpha", test_cli.alpha), test_cli.alpha, test_base.alpha,
                  test_cfg, "alpha");
  test_merge.bind(tst->add_option("--bootstrap", test_cli.bootstrap), test_cli.bootstrap,
                  test_base.bootstrap, test_cfg, "bootstrap");
  test_merge.bind(tst->add_option("--screen", test_cli.screen), test_cli.screen, test_base.screen,
                  test_cfg, "screen");
  test_merge.bind(tst->add_option("--q", test_cli.q), test_cli.q, test_base.q, test_cfg, "q");
  test_merge.bind(tst->add_option("--seed", test_cli.seed), test_cli.seed, test_base.seed,
                  test_cfg, "seed");
  test_merge.bind(tst->add_option("--threads", test_cli.threads), test_cli.threads,
                  test_base.threads, test_cfg, "threads");
  test_merge.bind(tst->add_option("--out", test_cli.out), test_cli.out, test_base.out, test_cfg,
                  "out");
  tst->add_flag("--verbose", test_base.verbose);

  // benchmark ---------------------------------------------------------------
  BenchmarkOpts bench_base, bench_cli;
  ConfigMap bench_cfg;
  register_benchmark_keys(bench_base, bench_cfg);
  FlagMerger bench_merge;
  std::string bench_config_path;
  bool bench_print = false;
  auto* bench = app.add_subcommand("benchmark", "run the repeated-experiment protocol with timing");
  bench->add_option("--config", bench_config_path, "JSON config file");
  bench->add_flag("--print-config", bench_print, "print the effective config and exit");
  bench_merge.bind(bench->add_option("--p", bench_cli.sim.p), bench_cli.sim.p, bench_base.sim.p,
                   bench_cfg, "p");
  bench_merge.bind(bench->add_option("--n", bench_cli.sim.n), bench_cli.sim.n, bench_base.sim.n,
                   bench_cfg, "n");
  bench_merge.bind(bench->add_option("--m", bench_cli.sim.m), bench_cli.sim.m, bench_base.sim.m,
                   bench_cfg, "m");
  bench_merge.bind(bench->add_option("--d", bench_cli.sim.d), bench_cli.sim.d, bench_base.sim.d,
                   bench_cfg, "d");
  bench_merge.bind(bench->add_option("--active", bench_cli.sim.active), bench_cli.sim.active,
                   bench_base.sim.active, bench_cfg, "active_count");
  bench_merge.bind(bench->add_option("--scenario", bench_cli.sim.scenario), bench_cli.sim.scenario,
                   bench_base.sim.scenario, bench_cfg, "scenario");
  bench_merge.bind(bench->add_option("--theta-max", bench_cli.sim.theta_max),
                   bench_cli.sim.theta_max, bench_base.sim.theta_max, bench_cfg, "theta_max");
  bench_merge.bind(bench->add_option("--beta-r", bench_cli.sim.beta_r), bench_cli.sim.beta_r,
                   bench_base.sim.beta_r, bench_cfg, "beta_r");
  bench_merge.bind(bench->add_option("--pilot-cells", bench_cli.sim.pilot_cells),
                   bench_cli.sim.pilot_cells, bench_base.sim.pilot_cells, bench_cfg, "pilot_cells");
  bench_merge.bind(bench->add_option("--reps", bench_cli.sim.reps), bench_cli.sim.reps,
                   bench_base.sim.reps, bench_cfg, "reps");
  bench_merge.bind(bench->add_option("--seed", bench_cli.sim.seed), bench_cli.sim.seed,
                   bench_base.sim.seed, bench_cfg, "seed");
  bench_merge.bind(bench->add_option("--threads", bench_cli.sim.threads), bench_cli.sim.threads,
                   bench_base.sim.threads, bench_cfg, "threads");
  bench_merge.bind(bench->add_option("--out", bench_cli.sim.out), bench_cli.sim.out,
                   bench_base.sim.out, bench_cfg, "out");
  bench_merge.bind(bench->add_option("--n-values", bench_cli.n_values), bench_cli.n_values,
                   bench_base.n_values, bench_cfg, "n_values");
  bench_merge.bind(bench->add_option("--estimands", bench_cli.estimands), bench_cli.estimands,
                   bench_base.estimands, bench_cfg, "estimands");
  bench_merge.bind(bench->add_option("--methods", bench_cli.methods), bench_cli.methods,
                   bench_base.methods, bench_cfg, "methods");
  bench_merge.bind(bench->add_option("--crossfit-k", bench_cli.crossfit_k), bench_cli.crossfit_k,
                   bench_base.crossfit_k, bench_cfg, "crossfit_k");
  bench_merge.bind(bench->add_option("--epsilon", bench_cli.epsilon), bench_cli.epsilon,
                   bench_base.epsilon, bench_cfg, "epsilon");
  bench_merge.bind(bench->add_option("--cdf-grid-points", bench_cli.cdf_grid_points),
                   bench_cli.cdf_grid_points, bench_base.cdf_grid_points, bench_cfg,
                   "cdf_grid_points");
  bench_merge.bind(bench->add_option("--bandwidth", bench_cli.bandwidth), bench_cli.bandwidth,
                   bench_base.bandwidth, bench_cfg, "bandwidth");
  bench_merge.bind(bench->add_option("--outcome-family", bench_cli.outcome_family),
                   bench_cli.outcome_family, bench_base.outcome_family, bench_cfg,
                   "outcome_family");
  bench_merge.bind(bench->add_option("--y2-family", bench_cli.y2_family), bench_cli.y2_family,
                   bench_base.y2_family, bench_cfg, "y2_family");
  bench_merge.bind(bench->add_option("--density-floor", bench_cli.density_floor),
                   bench_cli.density_floor, bench_base.density_floor, bench_cfg, "density_floor");
  bench_merge.bind(bench->add_option("--fdp-threshold", bench_cli.fdp_threshold),
                   bench_cli.fdp_threshold, bench_base.fdp_threshold, bench_cfg, "fdp_threshold");
  bench_merge.bind(bench->add_option("--alpha", bench_cli.alpha), bench_cli.alpha,
                   bench_base.alpha, bench_cfg, "alpha");
  bench_merge.bind(bench->add_option("--bootstrap", bench_cli.bootstrap), bench_cli.bootstrap,
                   bench_base.bootstrap, bench_cfg, "bootstrap");
  bench_merge.bind(bench->add_option("--screen", bench_cli.screen), bench_cli.screen,
                   bench_base.screen, bench_cfg, "screen");
  bench_merge.bind(bench->add_option("--bh-q", bench_cli.bh_q), bench_cli.bh_q, bench_base.bh_q,
                   bench_cfg, "bh_q");
  bench_merge.bind(bench->add_option("--rho", bench_cli.rho), bench_cli.rho, bench_base.rho,
                   bench_cfg, "rho");
  bench->add_flag("--verbose", bench_base.sim.verbose);

  auto* ver = app.add_subcommand("version", "print name and version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  }

  if (ver->parsed()) {
    std::cout << kProjectName << " " << kProjectVersion << "\n";
    return 0;
  }
  if (sim->parsed()) {
    if (!sim_config_path.empty()) sim_cfg.apply(io_detail::load_json(sim_config_path));
    sim_merge.apply(sim_cfg);
    if (sim_print) {
      ConfigMap resolved;
      SimulateOpts dump = sim_base;
      const DgpConfig dgp = dgp_from_opts(sim_base, sim_cfg);
      dump.theta_max = dgp.theta_max;
      dump.beta_r = dgp.beta_r;
      register_simulate_keys(dump, resolved);
      std::cout << resolved.dump().dump(2) << "\n";
      return 0;
    }
    return cmd_simulate(sim_base, sim_cfg);
  }
  if (est->parsed()) {
    if (!est_config_path.empty()) est_cfg.apply(io_detail::load_json(est_config_path));
    est_merge.apply(est_cfg);
    if (est_print) {
      std::cout << est_cfg.dump().dump(2) << "\n";
      return 0;
    }
    return cmd_estimate(est_base);
  }
  if (tst->parsed()) {
    if (!test_config_path.empty()) test_cfg.apply(io_detail::load_json(test_config_path));
    test_merge.apply(test_cfg);
    if (test_print) {
      std::cout << test_cfg.dump().dump(2) << "\n";
      return 0;
    }
    return cmd_test(test_base);
  }
  if (bench->parsed()) {
    if (!bench_config_path.empty()) bench_cfg.apply(io_detail::load_json(bench_config_path));
    bench_merge.apply(bench_cfg);
    if (bench_print) {
      ConfigMap resolved;
      BenchmarkOpts dump = bench_base;
      const DgpConfig dgp = dgp_from_opts(bench_base.sim, bench_cfg);
      dump.sim.theta_max = dgp.theta_max;
      dump.sim.beta_r = dgp.beta_r;
      register_benchmark_keys(dump, resolved);
      std::cout << resolved.dump().dump(2) << "\n";
      return 0;
    }
    return cmd_benchmark(bench_base, bench_cfg);
  }
  return 0;
}

inline void print_error_json(const char* type, const std::string& message) {
  Json j;
  j["error"] = {{"type", type}, {"message", message}};
  std::cout << j.dump(2) << "\n";
}

}  // namespace cli

// Exit codes: 0 success (warnings allowed), 1 computational failure,
// 2 usage or IO error.
inline int run_cli(int argc, const char* const* argv) {
  try {
    return cli::dispatch(argc, argv);
  } catch (const CLI::ParseError& e) {
    cli::print_error_json("usage", e.what());
    return 2;
  } catch (const SchemaError& e) {
    cli::print_error_json("schema", e.what());
    return 2;
  } catch (const ParameterError& e) {
    cli::print_error_json("parameter", e.what());
    return 2;
  } catch (const IoError& e) {
    cli::print_error_json("io", e.what());
    return 2;
  } catch (const std::exception& e) {
    cli::print_error_json("computation", e.what());
    return 1;
  }
}

}  // namespace drmo

#endif  // DRMO_CLI_HPP
