#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "drmo/nuisance.hpp"
#include "drmo/rng.hpp"
#include "support/oracles.hpp"

using namespace drmo;

namespace {

// A ~ Bernoulli(p1(W)) tables with Poisson-style outcomes.
ObservationTable simple_table(std::uint64_t seed, int n, int p,
                              const std::function<double(double)>& p1_of_w,
                              const std::function<double(rng::Rng&, double, int)>& draw_y) {
  rng::Rng gen(seed);
  IntVec a(n);
  Mat w(n, 1);
  Mat y(n, p);
  for (int i = 0; i < n; ++i) {
    w(i, 0) = gen.normal();
    a[i] = gen.bernoulli(p1_of_w(w(i, 0))) ? 1 : 0;
    for (int j = 0; j < p; ++j) y(i, j) = draw_y(gen, w(i, 0), j);
  }
  return make_observation_table(a, w, y, {});
}

}  // namespace

TEST_CASE("propensity is ~0.5 when treatment ignores covariates") {
  const auto table = simple_table(
      1, 10000, 1, [](double) { return 0.5; },
      [](rng::Rng& gen, double, int) { return gen.normal(); });
  const Vec pi = fit_propensity(table, 0.01);
  REQUIRE(pi.minCoeff() > 0.45);
  REQUIRE(pi.maxCoeff() < 0.55);
}

TEST_CASE("propensity predictions are clipped at epsilon") {
  // Strong signal pushes fitted values to the boundary.
  const auto table = simple_table(
      2, 4000, 1, [](double w) { return 1.0 / (1.0 + std::exp(-6.0 * w)); },
      [](rng::Rng& gen, double, int) { return gen.normal(); });
  const Vec pi = fit_propensity(table, 0.01);
  REQUIRE(pi.minCoeff() == 0.01);
  REQUIRE(pi.maxCoeff() == 0.99);
}

TEST_CASE("the simulation protocol's logistic model is recovered") {
  const int d = 5, n = 20000;
  rng::Rng gen(3);
  IntVec a(n);
  Mat w(n, d);
  Mat y(n, 1);
  for (int i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int k = 0; k < d; ++k) {
      w(i, k) = gen.normal();
      sum += w(i, k);
    }
    a[i] = gen.bernoulli(1.0 / (1.0 + std::exp(sum / (d + 1)))) ? 1 : 0;
    y(i, 0) = gen.normal();
  }
  const auto table = make_observation_table(a, w, y, {});
  Vec response(n);
  for (int i = 0; i < n; ++i) response[i] = table.treatment[i];
  const auto fit = fit_glm(table.covariates, response, GlmFamily::kLogistic);
  REQUIRE(fit.converged);
  REQUIRE(std::abs(fit.coefficients[0] - 0.0) < 0.1);
  for (int k = 1; k <= d; ++k) {
    REQUIRE(std::abs(fit.coefficients[k] + 1.0 / (d + 1)) < 0.1);
  }
}

TEST_CASE("outcome means: constant response is reproduced exactly") {
  auto table = simple_table(
      4, 200, 1, [](double) { return 0.5; },
      [](rng::Rng&, double, int) { return 1.0; });
  table.outcomes.setConstant(5.0);
  const Mat mu = fit_outcome_means(table, 1, 1, GlmFamily::kPoissonLog);
  REQUIRE((mu.col(0).array() == 5.0).all());
}

TEST_CASE("outcome means: squares of indicators match the k=1 fit") {
  const auto table = simple_table(
      5, 400, 1, [](double) { return 0.5; },
      [](rng::Rng& gen, double w, int) {
        return gen.bernoulli(1.0 / (1.0 + std::exp(-w))) ? 1.0 : 0.0;
      });
  const Mat mu1 = fit_outcome_means(table, 0, 1, GlmFamily::kGaussianIdentity);
  const Mat mu2 = fit_outcome_means(table, 0, 2, GlmFamily::kGaussianIdentity);
  REQUIRE((mu1 - mu2).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("outcome means track a Poisson truth") {
  const int n = 5000;
  rng::Rng coef_gen(77);
  const double b1 = 0.5 * coef_gen.normal();
  const auto table = simple_table(
      6, n, 1, [](double) { return 0.5; },
      [&](rng::Rng& gen, double w, int) {
        return static_cast<double>(gen.poisson(std::exp(1.0 + b1 * w)));
      });
  const Mat mu = fit_outcome_means(table, 1, 1, GlmFamily::kPoissonLog);
  Vec truth(n);
  for (int i = 0; i < n; ++i) truth[i] = std::exp(1.0 + b1 * table.covariates(i, 1));
  const double corr =
      ((mu.col(0).array() - mu.col(0).mean()) * (truth.array() - truth.mean())).sum() /
      std::sqrt((mu.col(0).array() - mu.col(0).mean()).square().sum() *
                (truth.array() - truth.mean()).square().sum());
  REQUIRE(corr > 0.95);
}

TEST_CASE("conditional CDF boundary conventions") {
  const auto table = simple_table(
      7, 300, 1, [](double) { return 0.5; },
      [](rng::Rng& gen, double w, int) { return w + gen.normal(); });
  const auto values = arm_outcome_values(table, 1, 0);
  const Vec grid = default_cdf_grid(values, 21);
  const auto cdf = fit_conditional_cdf(table, 1, 0, grid);
  const double lo = *std::min_element(values.begin(), values.end());
  const double hi = *std::max_element(values.begin(), values.end());
  REQUIRE((cdf.at(lo - 1.0).array() == 0.0).all());
  REQUIRE((cdf.at(hi + 1.0).array() == 1.0).all());
  REQUIRE((cdf.at(hi).array() == 1.0).all());
}

TEST_CASE("conditional CDF is monotone and bounded on a fine grid") {
  const auto table = simple_table(
      8, 500, 1, [](double w) { return 1.0 / (1.0 + std::exp(-w)); },
      [](rng::Rng& gen, double w, int) { return 0.5 * w + gen.normal(); });
  const auto values = arm_outcome_values(table, 0, 0);
  const auto cdf = fit_conditional_cdf(table, 0, 0, default_cdf_grid(values, 41));
  const double lo = *std::min_element(values.begin(), values.end());
  const double hi = *std::max_element(values.begin(), values.end());
  for (int i = 0; i < 25; ++i) {
    double prev = -1.0;
    for (int g = 0; g < 100; ++g) {
      const double theta = lo - 0.5 + (hi - lo + 1.0) * g / 99.0;
      const double v = cdf.at(theta, i);
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
      REQUIRE(v >= prev - 1e-12);
      prev = v;
    }
  }
}

TEST_CASE("CDF at the arm median is ~0.5 under independence") {
  const auto table = simple_table(
      11, 5000, 1, [](double) { return 0.5; },
      [](rng::Rng& gen, double, int) { return gen.normal(); });
  const auto values = arm_outcome_values(table, 1, 0);
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  const auto cdf = fit_conditional_cdf(table, 1, 0, default_cdf_grid(values, 41));
  const Vec at_median = cdf.at(median);
  REQUIRE(at_median.minCoeff() > 0.45);
  REQUIRE(at_median.maxCoeff() < 0.55);
}

TEST_CASE("constant indicator grid points skip the GLM") {
  const auto table = simple_table(
      10, 100, 1, [](double) { return 0.5; },
      [](rng::Rng& gen, double, int) { return 1.0 + gen.uniform(); });
  Vec grid(3);
  grid << 0.0, 1.5, 3.0;  // below all / interior / above all
  const auto cdf = fit_conditional_cdf(table, 1, 0, grid);
  REQUIRE((cdf.at(0.0).array() == 0.0).all());
  REQUIRE((cdf.at(3.0).array() == 1.0).all());
}

TEST_CASE("ipw_quantile_init") {
  SECTION("equal weights reduce to the empirical quantile") {
    IntVec a(6);
    a << 1, 1, 1, 0, 0, 0;
    Mat w = Mat::Zero(6, 1);
    Mat y(6, 1);
    y << 1, 2, 3, 0, 0, 0;
    const auto table = make_observation_table(a, w, y, {});
    const Vec pi = Vec::Constant(6, 0.5);
    REQUIRE(ipw_quantile_init(table, pi, 1, 0, 0.5) == 2.0);
  }
  SECTION("degenerate singleton returns its value") {
    IntVec a(3);
    a << 1, 0, 0;
    Mat w = Mat::Zero(3, 1);
    Mat y(3, 1);
    y << 7, 1, 2;
    const auto table = make_observation_table(a, w, y, {});
    const Vec pi = Vec::Constant(3, 0.5);
    REQUIRE(ipw_quantile_init(table, pi, 1, 0, 0.1) == 7.0);
    REQUIRE(ipw_quantile_init(table, pi, 1, 0, 0.9) == 7.0);
  }
  SECTION("weights concentrate the quantile on the heavy value") {
    IntVec a(3);
    a << 1, 1, 0;
    Mat w = Mat::Zero(3, 1);
    Mat y(3, 1);
    y << 1, 2, 0;
    const auto table = make_observation_table(a, w, y, {});
    Vec pi(3);
    // normalized IPW weights ~ {0.899, 0.101}: cumulative 0.899 >= 0.5 at value 1
    pi << 1.0 / 9.0, 0.99, 0.5;
    REQUIRE(ipw_quantile_init(table, pi, 1, 0, 0.5) == 1.0);
  }
  SECTION("rho domain") {
    IntVec a(2);
    a << 1, 0;
    Mat w = Mat::Zero(2, 1);
    Mat y = Mat::Zero(2, 1);
    const auto table = make_observation_table(a, w, y, {});
    const Vec pi = Vec::Constant(2, 0.5);
    REQUIRE_THROWS_AS(ipw_quantile_init(table, pi, 1, 0, 0.0), ParameterError);
    REQUIRE_THROWS_AS(ipw_quantile_init(table, pi, 1, 0, 1.0), ParameterError);
  }
}

TEST_CASE("dr_density with pi=1 cancels the mu kernels exactly") {
  // Algebraic reduction: with pi == 1 on the treated arm the mu terms cancel.
  rng::Rng gen(12);
  const int n = 300;
  IntVec a = IntVec::Ones(n);
  a[n - 1] = 0;
  Mat w = Mat::Zero(n, 1);
  Mat y(n, 1);
  for (int i = 0; i < n; ++i) y(i, 0) = gen.normal();
  auto table = make_observation_table(a, w, y, {});
  Vec pi = Vec::Constant(n, 1.0);  // injected, unclipped
  Vec mu(n);
  for (int i = 0; i < n; ++i) mu[i] = gen.normal();  // arbitrary; must cancel on treated rows
  const double h = 0.35, at = -0.1;
  const auto est = dr_density(table, pi, mu, 1, 0, at, h, 0.0);
  // Direct KDE over treated rows plus the control subject's mu kernel.
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    if (table.treatment[i] == 1) {
      acc += std::exp(-0.5 * std::pow((at - y(i, 0)) / h, 2)) / std::sqrt(2 * M_PI);
    } else {
      acc += std::exp(-0.5 * std::pow((at - mu[i]) / h, 2)) / std::sqrt(2 * M_PI);
    }
  }
  REQUIRE(est.value == Catch::Approx(acc / (n * h)).margin(1e-12));
}

TEST_CASE("dr_density approximates the standard normal density") {
  const int n = 10000;
  const auto table = simple_table(
      13, n, 1, [](double) { return 0.5; },
      [](rng::Rng& gen, double, int) { return gen.normal(); });
  const Mat mu = fit_outcome_means(table, 1, 1, GlmFamily::kGaussianIdentity);
  const auto values = arm_outcome_values(table, 1, 0);
  const double h = silverman_bandwidth(values);
  const auto est = dr_density(table, fit_propensity(table, 0.01), mu.col(0), 1, 0, 0.0, h, 0.0);
  REQUIRE(std::abs(est.value - 0.3989) < 0.05);
}

TEST_CASE("dr_density integrates to ~1") {
  const int n = 10000;
  const auto table = simple_table(
      14, n, 1, [](double) { return 0.5; },
      [](rng::Rng& gen, double, int) { return gen.normal(); });
  const Mat mu = fit_outcome_means(table, 1, 1, GlmFamily::kGaussianIdentity);
  const Vec pi = fit_propensity(table, 0.01);
  const auto values = arm_outcome_values(table, 1, 0);
  const double h = silverman_bandwidth(values);
  const double integral = oracles::trapezoid(
      [&](double yy) { return dr_density(table, pi, mu.col(0), 1, 0, yy, h, 0.0).value; }, -6.0,
      6.0, 601);
  REQUIRE(integral > 0.95);
  REQUIRE(integral < 1.05);
}

TEST_CASE("density floor fires and is reported") {
  const auto table = simple_table(
      15, 200, 1, [](double) { return 0.5; },
      [](rng::Rng& gen, double, int) { return gen.normal(); });
  const Vec pi = Vec::Constant(200, 0.5);
  const Vec mu = Vec::Zero(200);
  const auto est = dr_density(table, pi, mu, 1, 0, 50.0, 0.5, 0.01);  // far outside the data
  REQUIRE(est.floored);
  REQUIRE(est.value == 0.01);
}

TEST_CASE("crossfit fold bookkeeping") {
  SECTION("leave-one-out has n singleton folds") {
    const IntVec folds = crossfit_folds(6, 6, 1);
    std::set<int> seen;
    for (int i = 0; i < 6; ++i) seen.insert(folds[i]);
    REQUIRE(seen.size() == 6);
  }
  SECTION("same seed gives the same assignment") {
    REQUIRE(crossfit_folds(103, 5, 9) == crossfit_folds(103, 5, 9));
    REQUIRE(crossfit_folds(103, 5, 9) != crossfit_folds(103, 5, 10));
  }
  SECTION("K=5, n=103 balances as 21/21/21/20/20") {
    const IntVec folds = crossfit_folds(103, 5, 4);
    std::vector<int> sizes(5, 0);
    for (int i = 0; i < 103; ++i) ++sizes[static_cast<std::size_t>(folds[i])];
    std::sort(sizes.begin(), sizes.end());
    REQUIRE(sizes == std::vector<int>{20, 20, 21, 21, 21});
  }
}

TEST_CASE("cross-fitted values never use the subject's own row") {
  const auto table = simple_table(
      16, 40, 1, [](double) { return 0.5; },
      [](rng::Rng& gen, double, int) { return gen.normal(); });
  // Probe recipe: "prediction" = mean outcome over the training rows, so each
  // subject's value changes exactly when its own row enters training.
  const auto probe = [](const ObservationTable& t, const std::vector<int>& train,
                        const std::vector<int>& eval, NuisanceFit& out) {
    double mean = 0.0;
    for (int r : train) mean += t.outcomes(r, 0);
    mean /= static_cast<double>(train.size());
    for (int r : eval) out.pi1[r] = mean;
  };
  const auto fit = crossfit(table, 4, 11, probe);
  REQUIRE(fit.folds.has_value());
  const auto folds = *fit.folds;
  for (int i = 0; i < table.n(); ++i) {
    double expected = 0.0;
    int count = 0;
    for (int r = 0; r < table.n(); ++r) {
      if (folds[r] != folds[i]) {
        expected += table.outcomes(r, 0);
        ++count;
      }
    }
    expected /= count;
    REQUIRE(fit.pi1[i] == Catch::Approx(expected).margin(1e-12));
    // Leaving out row i alone would change the value: verify dependence.
    REQUIRE(count < table.n());
  }
}

TEST_CASE("fit_nuisance cross-fitted propensities stay in the clip range") {
  const auto table = simple_table(
      17, 200, 2, [](double w) { return 1.0 / (1.0 + std::exp(-w)); },
      [](rng::Rng& gen, double, int) { return static_cast<double>(gen.poisson(2.0)); });
  NuisanceConfig cfg;
  cfg.crossfit_k = 5;
  cfg.seed = 3;
  NuisanceNeeds needs;
  needs.mu_k1 = true;
  const auto fit = fit_nuisance(table, cfg, needs);
  REQUIRE(fit.crossfitted());
  REQUIRE(fit.pi1.minCoeff() >= cfg.epsilon);
  REQUIRE(fit.pi1.maxCoeff() <= 1.0 - cfg.epsilon);
  // pi0 + pi1 == 1 exactly
  const Vec pi0 = fit.pi(0);
  for (int i = 0; i < table.n(); ++i) REQUIRE(pi0[i] + fit.pi1[i] == 1.0);
}

TEST_CASE("fold error when a complement misses an arm") {
  // 3 subjects in arm 1; K = n makes some training complement lose arm 1 only
  // if an arm has exactly one member. Construct a single treated subject.
  IntVec a(8);
  a.setZero();
  a[0] = 1;
  Mat w = Mat::Zero(8, 1);
  Mat y = Mat::Ones(8, 1);
  const auto table = make_observation_table(a, w, y, {});
  NuisanceConfig cfg;
  cfg.crossfit_k = 8;
  NuisanceNeeds needs;
  needs.mu_k1 = true;
  REQUIRE_THROWS_AS(fit_nuisance(table, cfg, needs), FoldError);
}
