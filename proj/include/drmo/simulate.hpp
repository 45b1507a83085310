#ifndef DRMO_SIMULATE_HPP
#define DRMO_SIMULATE_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "drmo/common.hpp"
#include "drmo/data_model.hpp"
#include "drmo/estimands.hpp"
#include "drmo/nuisance.hpp"
#include "drmo/parallel.hpp"
#include "drmo/rng.hpp"
#include "drmo/testing.hpp"

namespace drmo {

enum class Scenario { kMeanShift, kMedianShift };

inline const char* scenario_name(Scenario s) {
  return s == Scenario::kMeanShift ? "mean_shift" : "median_shift";
}

inline Scenario scenario_from_name(const std::string& name) {
  if (name == "mean_shift") return Scenario::kMeanShift;
  if (name == "median_shift") return Scenario::kMedianShift;
  throw ParameterError("unknown scenario '" + name + "' (expected mean_shift|median_shift)");
}

struct DgpConfig {
  int p = 500;
  int n = 400;
  int m = 50;  // cells per subject
  int d = 5;   // covariate dimension (before the intercept)
  int active_count = 20;
  Scenario scenario = Scenario::kMeanShift;
  double theta_max = 1.0;
  double beta_r = 0.5;
  std::uint64_t seed = 0;
  int pilot_cells = 1000;
  // LogNormal(lambda - s^2/2, s): lambda enters on the log scale (mean-matching)
  // when true; as a raw location when false.
  bool lognormal_location_on_log_scale = true;
};

// Scenario parameter pairs from the simulation protocol.
inline void apply_scenario_signal_defaults(DgpConfig& cfg) {
  if (cfg.scenario == Scenario::kMeanShift) {
    cfg.theta_max = 1.0;
    cfg.beta_r = 0.5;
  } else {
    cfg.theta_max = 10.0;
    cfg.beta_r = 2.0;
  }
}

inline void validate_dgp_config(const DgpConfig& cfg) {
  if (cfg.p < 1 || cfg.n < 2 || cfg.m < 1 || cfg.d < 1) {
    throw ParameterError("DGP sizes must be positive (n >= 2)");
  }
  if (cfg.active_count < 0 || cfg.active_count > cfg.p) {
    throw ParameterError("active_count must lie in [0, p]");
  }
  if (!(cfg.theta_max >= 0.0) || !(cfg.beta_r > 0.0)) {
    throw ParameterError("signal parameters must satisfy theta_max >= 0, beta_r > 0");
  }
  if (cfg.pilot_cells < 2) throw ParameterError("pilot_cells must be >= 2");
}

struct DgpData {
  ObservationTable table;
  std::vector<int> active;  // sorted outcome indices with treated-arm signal
  Vec signal;               // s_j per outcome (0 when null)
  Vec delta;                // +-1 sign for mean shifts (0 otherwise)
  Mat coef;                 // d x p true regression coefficients b_j
  Vec active_weights;       // softmax selection weights over outcomes
  long resample_warnings = 0;
};

namespace sim_detail {

inline double round_half_even(double x) { return std::nearbyint(x); }

constexpr double kMeanFloor = 0.01;

// The treated-arm cell law for an active outcome.
inline double draw_active_treated_cell(rng::Rng& gen, const DgpConfig& cfg, double lambda, double s,
                                       double delta, long& warnings) {
  if (cfg.scenario == Scenario::kMeanShift) {
    return static_cast<double>(gen.poisson(std::max(lambda + s * delta, kMeanFloor)));
  }
  const double location =
      (cfg.lognormal_location_on_log_scale ? std::log(std::max(lambda, kMeanFloor)) : lambda) -
      0.5 * s * s;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double draw = gen.lognormal(location, s);
    if (std::isfinite(draw)) return round_half_even(draw);
    ++warnings;
  }
  ++warnings;
  return 0.0;
}

inline double draw_control_cell(rng::Rng& gen, double lambda) {
  return static_cast<double>(gen.poisson(lambda));
}

}  // namespace sim_detail

// W ~ N(0, I_d); P(A=1|W) = 1/(1 + exp(1^T W/(d+1))); cell-level Poisson(lambda_j)
// with lambda_j = exp(W^T b_j); m cells summed into the derived outcome. Active
// outcomes swap the treated-arm cell law per scenario. Deterministic per seed.
inline DgpData generate_dgp(const DgpConfig& cfg) {
  validate_dgp_config(cfg);
  rng::Rng gen(rng::derive_seed(cfg.seed, 0x646770ULL));  // "dgp"

  DgpData data;
  data.coef.resize(cfg.d, cfg.p);
  for (int j = 0; j < cfg.p; ++j) {
    data.coef(0, j) = 1.0;
    for (int k = 1; k < cfg.d; ++k) data.coef(k, j) = 0.5 * gen.normal();
  }

  // Pilot draw at the control law: per-outcome dispersion of the cell mean
  // exp(W^T b_j) across pilot covariate draws drives the softmax weights.
  Vec mean_acc = Vec::Zero(cfg.p), sq_acc = Vec::Zero(cfg.p);
  {
    Vec w(cfg.d);
    for (int c = 0; c < cfg.pilot_cells; ++c) {
      for (int k = 0; k < cfg.d; ++k) w[k] = gen.normal();
      const Vec lam = (data.coef.transpose() * w).array().exp();
      mean_acc += lam;
      sq_acc += lam.cwiseProduct(lam);
    }
  }
  data.active_weights.resize(cfg.p);
  {
    const double nc = cfg.pilot_cells;
    double total = 0.0;
    for (int j = 0; j < cfg.p; ++j) {
      const double var = std::max(0.0, (sq_acc[j] - mean_acc[j] * mean_acc[j] / nc) / (nc - 1.0));
      data.active_weights[j] = std::sqrt(var);  // softmax(log sd) = sd / sum(sd)
      total += data.active_weights[j];
    }
    if (total > 0.0) {
      data.active_weights /= total;
    } else {
      data.active_weights.setConstant(1.0 / cfg.p);
    }
  }

  // Weighted draws without replacement until active_count distinct outcomes.
  if (cfg.active_count > 0) {
    std::vector<double> cum(static_cast<std::size_t>(cfg.p));
    double run = 0.0;
    for (int j = 0; j < cfg.p; ++j) {
      run += data.active_weights[j];
      cum[static_cast<std::size_t>(j)] = run;
    }
    std::set<int> chosen;
    long attempts = 0;
    const long max_attempts = 1000L * (cfg.p + cfg.active_count);
    while (static_cast<int>(chosen.size()) < cfg.active_count) {
      if (++attempts > max_attempts) {
        throw ComputationError("active-set sampling failed to find enough distinct outcomes");
      }
      const double u = gen.uniform() * run;
      const auto it = std::lower_bound(cum.begin(), cum.end(), u);
      chosen.insert(static_cast<int>(it - cum.begin()));
    }
    data.active.assign(chosen.begin(), chosen.end());
  }

  data.signal = Vec::Zero(cfg.p);
  data.delta = Vec::Zero(cfg.p);
  for (int j : data.active) {
    data.signal[j] = cfg.theta_max * gen.beta_one(cfg.beta_r);
    if (cfg.scenario == Scenario::kMeanShift) {
      data.delta[j] = gen.bernoulli(0.5) ? 1.0 : -1.0;
    }
  }

  IntVec treatment(cfg.n);
  Mat covariates(cfg.n, cfg.d);
  Mat outcomes = Mat::Zero(cfg.n, cfg.p);
  std::vector<bool> is_active(static_cast<std::size_t>(cfg.p), false);
  for (int j : data.active) is_active[static_cast<std::size_t>(j)] = true;

  for (int i = 0; i < cfg.n; ++i) {
    double wsum = 0.0;
    for (int k = 0; k < cfg.d; ++k) {
      covariates(i, k) = gen.normal();
      wsum += covariates(i, k);
    }
    const double p1 = 1.0 / (1.0 + std::exp(wsum / (cfg.d + 1)));
    treatment[i] = gen.bernoulli(p1) ? 1 : 0;
    const Vec lam = (data.coef.transpose() * covariates.row(i).transpose()).array().exp();
    for (int j = 0; j < cfg.p; ++j) {
      const bool shifted = treatment[i] == 1 && is_active[static_cast<std::size_t>(j)];
      double total = 0.0;
      if (shifted) {
        for (int c = 0; c < cfg.m; ++c) {
          total += sim_detail::draw_active_treated_cell(gen, cfg, lam[j], data.signal[j],
                                                        data.delta[j], data.resample_warnings);
        }
      } else {
        for (int c = 0; c < cfg.m; ++c) total += sim_detail::draw_control_cell(gen, lam[j]);
      }
      outcomes(i, j) = total;
    }
  }

  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(cfg.p));
  for (int j = 0; j < cfg.p; ++j) names.push_back("g" + std::to_string(j + 1));
  data.table = make_observation_table(std::move(treatment), std::move(covariates),
                                      std::move(outcomes), std::move(names));
  return data;
}

// Nominal derived-outcome effect sizes: the signed mean shift m*s_j*delta_j
// under mean shifts, the log-scale spread s_j under median shifts.
inline Vec nominal_effect(const DgpData& data, const DgpConfig& cfg) {
  if (cfg.scenario == Scenario::kMeanShift) {
    return static_cast<double>(cfg.m) * data.signal.cwiseProduct(data.delta);
  }
  return data.signal;
}

// Exact E[Y_j(1) - Y_j(0)] for the mean-shift DGP by quadrature over the
// N(0, ||b_j||^2) law of the linear predictor; handles the +0.01 mean floor.
inline Vec oracle_ate_mean_shift(const DgpData& data, const DgpConfig& cfg) {
  if (cfg.scenario != Scenario::kMeanShift) {
    throw ParameterError("oracle ATE is defined for the mean-shift scenario");
  }
  Vec out = Vec::Zero(cfg.p);
  constexpr int kNodes = 8001;
  for (int j : data.active) {
    const double v = data.coef.col(j).squaredNorm();
    const double sd = std::sqrt(v);
    const double s = data.signal[j] * data.delta[j];
    const double a = -12.0 * sd, b = 12.0 * sd;
    const double h = (b - a) / (kNodes - 1);
    double integral = 0.0;  // Simpson over the shifted-minus-control mean
    for (int k = 0; k < kNodes; ++k) {
      const double x = a + h * k;
      const double lam = std::exp(x);
      const double f = (std::max(lam + s, sim_detail::kMeanFloor) - lam) *
                       std::exp(-0.5 * x * x / v) / (sd * std::sqrt(2.0 * M_PI));
      const double weight = (k == 0 || k == kNodes - 1) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
      integral += weight * f;
    }
    integral *= h / 3.0;
    out[j] = static_cast<double>(cfg.m) * integral;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Repeated-experiment protocol.

enum class TestMethod { kStepdown, kFwer, kBh };

inline const char* method_name(TestMethod m) {
  switch (m) {
    case TestMethod::kStepdown: return "stepdown";
    case TestMethod::kFwer: return "fwer";
    case TestMethod::kBh: return "bh";
  }
  return "?";
}

inline TestMethod method_from_name(const std::string& name) {
  if (name == "stepdown") return TestMethod::kStepdown;
  if (name == "fwer") return TestMethod::kFwer;
  if (name == "bh") return TestMethod::kBh;
  throw ParameterError("unknown method '" + name + "' (expected stepdown|fwer|bh)");
}

struct ExperimentConfig {
  DgpConfig dgp;
  int replicates = 1;
  std::vector<EstimandKind> estimands{EstimandKind::kAte};
  std::vector<TestMethod> methods{TestMethod::kStepdown};
  NuisanceConfig nuisance;
  double fdp_threshold = 0.1;  // c
  double alpha = 0.05;
  int bootstrap_b = 1000;
  double screen_cn = 0.01;
  double bh_q = 0.05;
  double rho = 0.5;
  int threads = 0;
};

struct ReplicateRecord {
  int replicate = 0;
  EstimandKind estimand = EstimandKind::kAte;
  TestMethod method = TestMethod::kStepdown;
  double fdp = 0.0;
  bool exceed = false;
  double power = 0.0;
  int discoveries = 0;
  int truth_size = 0;
};

struct AggregateRecord {
  EstimandKind estimand = EstimandKind::kAte;
  TestMethod method = TestMethod::kStepdown;
  double fdx = 0.0;        // fraction of replicates with FDP > c
  double fdr = 0.0;        // mean FDP
  double mean_power = 0.0;
  int replicates_ok = 0;
};

struct PhaseTimes {
  double dgp_s = 0.0;
  double nuisance_s = 0.0;
  double estimation_s = 0.0;
  double testing_s = 0.0;
};

struct SimReport {
  std::vector<ReplicateRecord> records;
  std::vector<AggregateRecord> aggregates;
  PhaseTimes phases;
  int replicates = 0;
  int failures = 0;
  std::vector<std::string> failure_messages;
  long resample_warnings = 0;
  bool null_truth = false;  // empty active set: power reported as 0 by convention
};

inline bool is_long_running(const ExperimentConfig& cfg) {
  const double cell_draws = static_cast<double>(cfg.dgp.n) * cfg.dgp.m * cfg.dgp.p *
                            std::max(1, cfg.replicates);
  return cfg.dgp.p >= 4000 || cell_draws > 2.0e9;
}

inline SimReport run_experiment(const ExperimentConfig& cfg) {
  if (cfg.replicates < 1) throw ParameterError("replicates must be >= 1");
  if (cfg.estimands.empty()) throw ParameterError("no estimands requested");
  if (cfg.methods.empty()) throw ParameterError("no testing methods requested");
  validate_dgp_config(cfg.dgp);

  struct ReplicateOutput {
    std::vector<ReplicateRecord> records;
    std::string failure;
    bool failed = false;
    long warnings = 0;
    PhaseTimes phases;
  };
  std::vector<ReplicateOutput> outputs(static_cast<std::size_t>(cfg.replicates));
  const NuisanceNeeds needs = NuisanceNeeds::for_estimands(cfg.estimands);

  parallel_for(cfg.replicates, cfg.threads, [&](int r) {
    auto& out = outputs[static_cast<std::size_t>(r)];
    using clock = std::chrono::steady_clock;
    try {
      DgpConfig dgp = cfg.dgp;
      dgp.seed = cfg.dgp.seed + static_cast<std::uint64_t>(r);
      auto t0 = clock::now();
      const DgpData data = generate_dgp(dgp);
      auto t1 = clock::now();
      out.warnings = data.resample_warnings;

      NuisanceConfig ncfg = cfg.nuisance;
      ncfg.seed = dgp.seed;
      const NuisanceFit nuisance = fit_nuisance(data.table, ncfg, needs, 1);
      auto t2 = clock::now();

      std::vector<EstimateOutput> estimates;
      estimates.reserve(cfg.estimands.size());
      QuantileOptions qopts;
      qopts.rho = cfg.rho;
      qopts.bandwidth = ncfg.bandwidth;
      qopts.density_floor = ncfg.density_floor;
      for (EstimandKind kind : cfg.estimands) {
        switch (kind) {
          case EstimandKind::kAte: estimates.push_back(estimate_ate(data.table, nuisance)); break;
          case EstimandKind::kSte: estimates.push_back(estimate_ste(data.table, nuisance)); break;
          case EstimandKind::kQte:
            estimates.push_back(estimate_qte(data.table, nuisance, qopts));
            break;
          case EstimandKind::kSqte:
            estimates.push_back(estimate_sqte(data.table, nuisance, qopts));
            break;
        }
      }
      auto t3 = clock::now();

      for (std::size_t e = 0; e < estimates.size(); ++e) {
        const auto& est = estimates[e];
        for (TestMethod method : cfg.methods) {
          std::vector<int> discoveries;
          switch (method) {
            case TestMethod::kStepdown: {
              StepdownParams params;
              params.c = cfg.fdp_threshold;
              params.alpha = cfg.alpha;
              params.bootstrap_b = cfg.bootstrap_b;
              params.screen_cn = cfg.screen_cn;
              params.seed = dgp.seed;
              discoveries = stepdown_fdx(est.result, est.influence, params).discoveries;
              break;
            }
            case TestMethod::kFwer:
              discoveries = fwer_test(est.result, est.influence, cfg.alpha, cfg.bootstrap_b,
                                      cfg.screen_cn, dgp.seed);
              break;
            case TestMethod::kBh: {
              const auto candidates = testing_detail::candidate_set(est.result, cfg.screen_cn);
              Vec pvals(static_cast<Eigen::Index>(candidates.size()));
              for (std::size_t k = 0; k < candidates.size(); ++k) {
                pvals[static_cast<Eigen::Index>(k)] = two_sided_pvalue(est.result.t[candidates[k]]);
              }
              if (candidates.size() > 0) {
                for (int idx : bh_procedure(pvals, cfg.bh_q)) {
                  discoveries.push_back(candidates[static_cast<std::size_t>(idx)]);
                }
              }
              break;
            }
          }
          const ErrorMetrics metrics = error_metrics(discoveries, data.active, cfg.fdp_threshold);
          ReplicateRecord record;
          record.replicate = r;
          record.estimand = cfg.estimands[e];
          record.method = method;
          record.fdp = metrics.fdp;
          record.exceed = metrics.exceed;
          record.power = metrics.power;
          record.discoveries = static_cast<int>(discoveries.size());
          record.truth_size = static_cast<int>(data.active.size());
          out.records.push_back(record);
        }
      }
      auto t4 = clock::now();
      const auto secs = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double>(b - a).count();
      };
      out.phases.dgp_s = secs(t0, t1);
      out.phases.nuisance_s = secs(t1, t2);
      out.phases.estimation_s = secs(t2, t3);
      out.phases.testing_s = secs(t3, t4);
    } catch (const std::exception& e) {
      out.failed = true;
      out.failure = e.what();
    }
  });

  SimReport report;
  report.replicates = cfg.replicates;
  report.null_truth = cfg.dgp.active_count == 0;
  for (const auto& out : outputs) {
    if (out.failed) {
      ++report.failures;
      report.failure_messages.push_back(out.failure);
      continue;
    }
    report.resample_warnings += out.warnings;
    report.phases.dgp_s += out.phases.dgp_s;
    report.phases.nuisance_s += out.phases.nuisance_s;
    report.phases.estimation_s += out.phases.estimation_s;
    report.phases.testing_s += out.phases.testing_s;
    report.records.insert(report.records.end(), out.records.begin(), out.records.end());
  }
  if (report.failures * 10 > cfg.replicates) {
    throw ComputationError("more than 10% of replicates failed; first failure: " +
                           (report.failure_messages.empty() ? std::string("?")
                                                            : report.failure_messages.front()));
  }

  for (EstimandKind kind : cfg.estimands) {
    for (TestMethod method : cfg.methods) {
      AggregateRecord agg;
      agg.estimand = kind;
      agg.method = method;
      for (const auto& rec : report.records) {
        if (rec.estimand != kind || rec.method != method) continue;
        agg.fdx += rec.exceed ? 1.0 : 0.0;
        agg.fdr += rec.fdp;
        agg.mean_power += rec.power;
        ++agg.replicates_ok;
      }
      if (agg.replicates_ok > 0) {
        agg.fdx /= agg.replicates_ok;
        agg.fdr /= agg.replicates_ok;
        agg.mean_power /= agg.replicates_ok;
      }
      report.aggregates.push_back(agg);
    }
  }
  return report;
}

}  // namespace drmo

#endif  // DRMO_SIMULATE_HPP
