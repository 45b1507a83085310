#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "drmo/rng.hpp"
#include "drmo/simulate.hpp"

using namespace drmo;

TEST_CASE("same seed gives bit-identical tables") {
  DgpConfig cfg;
  cfg.p = 12;
  cfg.n = 30;
  cfg.m = 4;
  cfg.d = 3;
  cfg.active_count = 3;
  cfg.seed = 11;
  const auto a = generate_dgp(cfg);
  const auto b = generate_dgp(cfg);
  REQUIRE(a.table.treatment == b.table.treatment);
  REQUIRE(a.table.covariates == b.table.covariates);
  REQUIRE(a.table.outcomes == b.table.outcomes);
  REQUIRE(a.active == b.active);
  cfg.seed = 12;
  const auto c = generate_dgp(cfg);
  REQUIRE(a.table.outcomes != c.table.outcomes);
}

TEST_CASE("null DGP has no active outcomes") {
  DgpConfig cfg;
  cfg.p = 8;
  cfg.n = 20;
  cfg.m = 3;
  cfg.active_count = 0;
  const auto data = generate_dgp(cfg);
  REQUIRE(data.active.empty());
  REQUIRE(data.signal.isZero());
  REQUIRE(data.delta.isZero());
}

TEST_CASE("paper-scale configs validate") {
  DgpConfig cfg;
  cfg.p = 8000;
  cfg.n = 400;
  cfg.m = 100;
  cfg.d = 5;
  cfg.active_count = 200;
  cfg.scenario = Scenario::kMeanShift;
  apply_scenario_signal_defaults(cfg);
  REQUIRE(cfg.theta_max == 1.0);
  REQUIRE(cfg.beta_r == 0.5);
  REQUIRE_NOTHROW(validate_dgp_config(cfg));
  cfg.scenario = Scenario::kMedianShift;
  apply_scenario_signal_defaults(cfg);
  REQUIRE(cfg.theta_max == 10.0);
  REQUIRE(cfg.beta_r == 2.0);
}

TEST_CASE("config validation rejects bad sizes") {
  DgpConfig cfg;
  cfg.active_count = cfg.p + 1;
  REQUIRE_THROWS_AS(validate_dgp_config(cfg), ParameterError);
  cfg = DgpConfig{};
  cfg.n = 1;
  REQUIRE_THROWS_AS(validate_dgp_config(cfg), ParameterError);
}

TEST_CASE("treatment frequency matches the logistic model") {
  DgpConfig cfg;
  cfg.p = 2;
  cfg.n = 20000;
  cfg.m = 1;
  cfg.active_count = 0;
  cfg.seed = 5;
  const auto data = generate_dgp(cfg);
  // P(A=1) = E[sigma(-1^T W/(d+1))] = 0.5 by symmetry
  double frac = 0.0;
  for (int i = 0; i < cfg.n; ++i) frac += data.table.treatment[i];
  frac /= cfg.n;
  REQUIRE(std::abs(frac - 0.5) < 0.02);
  // treatment correlates negatively with 1^T W
  double cov = 0.0;
  for (int i = 0; i < cfg.n; ++i) {
    double s = 0.0;
    for (int k = 1; k <= cfg.d; ++k) s += data.table.covariates(i, k);
    cov += (data.table.treatment[i] - frac) * s;
  }
  REQUIRE(cov / cfg.n < -0.1);
}

TEST_CASE("mean-shift arm gap matches the quadrature oracle through true-propensity IPW") {
  DgpConfig cfg;
  cfg.p = 6;
  cfg.n = 10000;
  cfg.m = 10;
  cfg.d = 3;
  cfg.active_count = 3;
  cfg.scenario = Scenario::kMeanShift;
  cfg.theta_max = 1.0;
  cfg.beta_r = 0.5;
  cfg.seed = 17;
  const auto data = generate_dgp(cfg);
  const Vec oracle = oracle_ate_mean_shift(data, cfg);
  for (int j : data.active) {
    // Horvitz-Thompson with the true propensity is unbiased for the ATE.
    Vec contrib(cfg.n);
    for (int i = 0; i < cfg.n; ++i) {
      double wsum = 0.0;
      for (int k = 1; k <= cfg.d; ++k) wsum += data.table.covariates(i, k);
      const double p1 = 1.0 / (1.0 + std::exp(wsum / (cfg.d + 1)));
      const double y = data.table.outcomes(i, j);
      contrib[i] = data.table.treatment[i] == 1 ? y / p1 : -y / (1.0 - p1);
    }
    const double estimate = contrib.mean();
    const double se = std::sqrt((contrib.array() - estimate).square().sum()) / cfg.n;
    REQUIRE(std::abs(estimate - oracle[j]) <= 4.0 * se);
    // The nominal shift bounds the truth; the 0.01 mean floor only shrinks
    // magnitudes on the delta = -1 side.
    const double nominal = cfg.m * data.signal[j] * data.delta[j];
    if (data.delta[j] > 0) {
      REQUIRE(oracle[j] == Catch::Approx(nominal).margin(1e-4 * (1.0 + nominal)));
    } else {
      REQUIRE(oracle[j] < 0.0);
      REQUIRE(oracle[j] >= nominal - 1e-9);
    }
  }
}

TEST_CASE("median-shift cells keep the mean but move the median") {
  DgpConfig cfg;
  cfg.scenario = Scenario::kMedianShift;
  rng::Rng gen(23);
  const double lambda = 2.0, s = 2.0;
  const int n = 1000000;
  double mean_c = 0, mean_t = 0;
  std::vector<double> treated;
  treated.reserve(n);
  long warnings = 0;
  std::vector<double> control;
  control.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double c = sim_detail::draw_control_cell(gen, lambda);
    const double t = sim_detail::draw_active_treated_cell(gen, cfg, lambda, s, 0.0, warnings);
    mean_c += c;
    mean_t += t;
    control.push_back(c);
    treated.push_back(t);
  }
  mean_c /= n;
  mean_t /= n;
  REQUIRE(std::abs(mean_t - mean_c) < 0.1);  // mean matching, up to rounding
  std::nth_element(control.begin(), control.begin() + n / 2, control.end());
  std::nth_element(treated.begin(), treated.begin() + n / 2, treated.end());
  const double med_c = control[n / 2], med_t = treated[n / 2];
  REQUIRE(med_c - med_t >= 1.0);  // lognormal with sigma=2 pushes the median to ~0
  REQUIRE(warnings == 0);
}

TEST_CASE("active-set selection favors high-dispersion outcomes") {
  double cov = 0.0;
  int count = 0;
  for (std::uint64_t seed = 0; seed < 150; ++seed) {
    DgpConfig cfg;
    cfg.p = 30;
    cfg.n = 20;
    cfg.m = 1;
    cfg.d = 4;
    cfg.active_count = 4;
    cfg.pilot_cells = 200;
    cfg.seed = seed;
    const auto data = generate_dgp(cfg);
    std::vector<bool> active(30, false);
    for (int j : data.active) active[static_cast<std::size_t>(j)] = true;
    const double wbar = data.active_weights.mean();
    const double abar = 4.0 / 30.0;
    for (int j = 0; j < 30; ++j) {
      cov += (data.active_weights[j] - wbar) * ((active[static_cast<std::size_t>(j)] ? 1.0 : 0.0) - abar);
      ++count;
    }
  }
  REQUIRE(cov / count > 0.0);
}

TEST_CASE("run_experiment on a null DGP reports zero FDP and zero power") {
  ExperimentConfig cfg;
  cfg.dgp.p = 15;
  cfg.dgp.n = 120;
  cfg.dgp.m = 3;
  cfg.dgp.d = 2;
  cfg.dgp.active_count = 0;
  cfg.dgp.seed = 31;
  cfg.replicates = 1;
  cfg.bootstrap_b = 300;
  cfg.estimands = {EstimandKind::kAte};
  cfg.methods = {TestMethod::kStepdown};
  cfg.threads = 1;
  const auto report = run_experiment(cfg);
  REQUIRE(report.null_truth);
  REQUIRE(report.records.size() == 1);
  REQUIRE(report.records[0].fdp == 0.0);
  REQUIRE(report.records[0].power == 0.0);
}

TEST_CASE("aggregates are the means of per-replicate metrics") {
  ExperimentConfig cfg;
  cfg.dgp.p = 20;
  cfg.dgp.n = 150;
  cfg.dgp.m = 5;
  cfg.dgp.d = 3;
  cfg.dgp.active_count = 5;
  cfg.dgp.seed = 7;
  cfg.replicates = 4;
  cfg.bootstrap_b = 200;
  cfg.estimands = {EstimandKind::kAte};
  cfg.methods = {TestMethod::kStepdown, TestMethod::kBh};
  cfg.threads = 1;
  const auto report = run_experiment(cfg);
  for (const auto& agg : report.aggregates) {
    double fdx = 0, fdr = 0, power = 0;
    int k = 0;
    for (const auto& rec : report.records) {
      if (rec.method != agg.method || rec.estimand != agg.estimand) continue;
      fdx += rec.exceed ? 1 : 0;
      fdr += rec.fdp;
      power += rec.power;
      ++k;
    }
    REQUIRE(k == agg.replicates_ok);
    REQUIRE(agg.fdx == Catch::Approx(fdx / k).margin(1e-12));
    REQUIRE(agg.fdr == Catch::Approx(fdr / k).margin(1e-12));
    REQUIRE(agg.mean_power == Catch::Approx(power / k).margin(1e-12));
  }
}

TEST_CASE("experiment-wide failure when most replicates cannot fit") {
  ExperimentConfig cfg;
  cfg.dgp.p = 4;
  cfg.dgp.n = 10;
  cfg.dgp.m = 2;
  cfg.dgp.d = 2;
  cfg.dgp.active_count = 0;
  cfg.replicates = 2;
  cfg.nuisance.crossfit_k = 50;  // K > n fails every replicate's fold assignment
  cfg.estimands = {EstimandKind::kAte};
  cfg.threads = 1;
  REQUIRE_THROWS_AS(run_experiment(cfg), ComputationError);
}

TEST_CASE("replicate records are deterministic for any thread count") {
  ExperimentConfig cfg;
  cfg.dgp.p = 10;
  cfg.dgp.n = 100;
  cfg.dgp.m = 3;
  cfg.dgp.d = 2;
  cfg.dgp.active_count = 2;
  cfg.dgp.seed = 13;
  cfg.replicates = 3;
  cfg.bootstrap_b = 150;
  cfg.estimands = {EstimandKind::kAte};
  cfg.methods = {TestMethod::kStepdown};
  cfg.threads = 1;
  const auto a = run_experiment(cfg);
  cfg.threads = 4;
  const auto b = run_experiment(cfg);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t k = 0; k < a.records.size(); ++k) {
    REQUIRE(a.records[k].fdp == b.records[k].fdp);
    REQUIRE(a.records[k].power == b.records[k].power);
    REQUIRE(a.records[k].discoveries == b.records[k].discoveries);
  }
}

TEST_CASE("long-running marker") {
  ExperimentConfig desk;
  desk.dgp.p = 500;
  desk.dgp.n = 400;
  desk.dgp.m = 50;
  desk.replicates = 100;
  REQUIRE_FALSE(is_long_running(desk));
  ExperimentConfig paper;
  paper.dgp.p = 8000;
  paper.dgp.n = 400;
  paper.dgp.m = 100;
  paper.replicates = 50;
  REQUIRE(is_long_running(paper));
}
