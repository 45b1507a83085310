#ifndef DRMO_NUISANCE_HPP
#define DRMO_NUISANCE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

#include "drmo/common.hpp"
#include "drmo/data_model.hpp"
#include "drmo/glm.hpp"
#include "drmo/parallel.hpp"
#include "drmo/rng.hpp"

namespace drmo {

struct NuisanceConfig {
  double epsilon = 0.01;  // propensity clip: pi in [epsilon, 1-epsilon]
  int crossfit_k = 0;     // 0 = fit on the full sample
  int cdf_grid_points = 41;
  std::optional<double> bandwidth;  // empty = Silverman per outcome/arm
  GlmFamily outcome_family = GlmFamily::kPoissonLog;
  GlmFamily y2_family = GlmFamily::kGaussianIdentity;
  std::uint64_t seed = 0;
  double density_floor = 0.01;
  GlmOptions glm;
};

// Conditional CDF evaluator from distribution regression: piecewise-linear in
// theta between knots, monotone per subject, exactly 0 below the arm minimum
// and exactly 1 at/above the arm maximum.
struct CdfEvaluator {
  Vec knots;   // strictly increasing, last knot is hi
  Mat values;  // n x knots, each row non-decreasing within [0,1]
  double lo = 0.0;
  double hi = 0.0;

  bool empty() const { return knots.size() == 0; }
  int n() const { return static_cast<int>(values.rows()); }

  double at(double theta, int i) const {
    if (theta < lo) return 0.0;
    if (theta >= hi) return 1.0;
    // knots.front() <= lo is guaranteed by construction
    int left = 0, right = static_cast<int>(knots.size()) - 1;
    while (right - left > 1) {
      const int mid = (left + right) / 2;
      if (knots[mid] <= theta) {
        left = mid;
      } else {
        right = mid;
      }
    }
    if (theta <= knots[left]) return values(i, left);
    const double span = knots[right] - knots[left];
    const double frac = span > 0 ? (theta - knots[left]) / span : 1.0;
    return values(i, left) + frac * (values(i, right) - values(i, left));
  }

  Vec at(double theta) const {
    Vec out(values.rows());
    for (int i = 0; i < static_cast<int>(values.rows()); ++i) out[i] = at(theta, i);
    return out;
  }
};

// All nuisance estimates evaluated per subject. Immutable once assembled;
// fields are public so exact values can be injected in tests.
struct NuisanceFit {
  double epsilon = 0.01;
  Vec pi1;                                        // clipped into [epsilon, 1-epsilon]
  std::array<std::array<Mat, 2>, 2> mu{};        // mu[a][k-1]: n x p (0x0 when unfitted)
  std::array<std::vector<CdfEvaluator>, 2> cdf{};  // per arm, per outcome (empty when unfitted)
  std::optional<IntVec> folds;                    // fold id per subject when cross-fitted
  std::vector<ColumnFlags> flags;                 // per outcome

  bool crossfitted() const { return folds.has_value(); }

  double pi_at(int arm, int i) const { return arm == 1 ? pi1[i] : 1.0 - pi1[i]; }

  Vec pi(int arm) const { return arm == 1 ? pi1 : Vec(Vec::Ones(pi1.size()) - pi1); }

  const Mat& mu_at(int arm, int power) const {
    const Mat& m = mu[arm][power - 1];
    if (m.size() == 0) {
      throw ParameterError("nuisance mu[a=" + std::to_string(arm) + ",k=" + std::to_string(power) +
                           "] was not fitted");
    }
    return m;
  }

  const CdfEvaluator& cdf_at(int arm, int outcome) const {
    if (cdf[arm].empty()) throw ParameterError("conditional CDFs were not fitted");
    return cdf[arm][static_cast<std::size_t>(outcome)];
  }
};

namespace nuisance_detail {

inline Mat rows_of(const Mat& m, const std::vector<int>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

inline Vec entries_of(const Vec& v, const std::vector<int>& rows) {
  Vec out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[rows[i]];
  return out;
}

inline std::vector<int> intersect_arm(const ObservationTable& table, const std::vector<int>& rows,
                                      int arm) {
  std::vector<int> out;
  for (int r : rows) {
    if (table.treatment[r] == arm) out.push_back(r);
  }
  return out;
}

// Lower empirical quantile of a sorted copy.
inline double empirical_quantile(std::vector<double> values, double level) {
  std::sort(values.begin(), values.end());
  const auto n = static_cast<long>(values.size());
  long idx = static_cast<long>(std::ceil(level * static_cast<double>(n))) - 1;
  idx = std::max(0L, std::min(idx, n - 1));
  return values[static_cast<std::size_t>(idx)];
}

inline double gaussian_kernel(double u) {
  return std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI);
}

}  // namespace nuisance_detail

// ---------------------------------------------------------------------------
// Fold assignment: seeded uniform partition with sizes differing by <= 1.

inline IntVec crossfit_folds(int n, int k, std::uint64_t seed) {
  if (k < 2) throw ParameterError("crossfit needs K >= 2");
  if (k > n) throw ParameterError("crossfit needs K <= n");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng::Rng gen(rng::derive_seed(seed, 0x666f6c64ULL));  // "fold"
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(gen.raw() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  IntVec folds(n);
  for (int pos = 0; pos < n; ++pos) folds[order[static_cast<std::size_t>(pos)]] = pos % k;
  return folds;
}

struct FoldSplit {
  std::vector<int> train;
  std::vector<int> eval;
};

inline std::vector<FoldSplit> fold_splits(const IntVec& folds, int k) {
  std::vector<FoldSplit> splits(static_cast<std::size_t>(k));
  for (int i = 0; i < folds.size(); ++i) {
    for (int f = 0; f < k; ++f) {
      if (folds[i] == f) {
        splits[static_cast<std::size_t>(f)].eval.push_back(i);
      } else {
        splits[static_cast<std::size_t>(f)].train.push_back(i);
      }
    }
  }
  return splits;
}

// Generic cross-fitting driver: the recipe fills per-subject nuisance values
// for `eval` rows using models trained on `train` rows only.
using NuisanceRecipe = std::function<void(const ObservationTable&, const std::vector<int>& train,
                                          const std::vector<int>& eval, NuisanceFit&)>;

inline NuisanceFit crossfit(const ObservationTable& table, int k, std::uint64_t seed,
                            const NuisanceRecipe& recipe) {
  const IntVec folds = crossfit_folds(table.n(), k, seed);
  NuisanceFit fit;
  fit.pi1 = Vec::Zero(table.n());
  fit.flags.assign(static_cast<std::size_t>(table.p()), ColumnFlags{});
  fit.folds = folds;
  for (const auto& split : fold_splits(folds, k)) {
    bool has0 = false, has1 = false;
    for (int r : split.train) {
      has0 = has0 || table.treatment[r] == 0;
      has1 = has1 || table.treatment[r] == 1;
    }
    if (!has0 || !has1) {
      throw FoldError("a cross-fitting training complement is missing a treatment arm; "
                      "use a larger n or a smaller K");
    }
    recipe(table, split.train, split.eval, fit);
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Individual nuisance estimators (full-sample forms).

inline Vec fit_propensity(const ObservationTable& table, double epsilon,
                          const GlmOptions& opts = GlmOptions{}) {
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw ParameterError("epsilon must be in (0, 0.5)");
  Vec response(table.n());
  for (int i = 0; i < table.n(); ++i) response[i] = table.treatment[i];
  const GlmFit fit = fit_glm(table.covariates, response, GlmFamily::kLogistic, std::nullopt, opts);
  if (!fit.converged) {
    throw ComputationError(std::string("propensity fit did not converge") +
                           (fit.separated ? " (perfect separation)" : ""));
  }
  return predict_glm(fit, table.covariates, std::make_pair(epsilon, 1.0 - epsilon));
}

// Per-outcome GLM of Y^k on W over the arm-a subsample, predicted for all n
// subjects. Predictions are clamped to the observed response range; clamping
// and per-outcome fit failures are flagged, never fatal.
inline Mat fit_outcome_means(const ObservationTable& table, int arm, int power, GlmFamily family,
                             std::vector<ColumnFlags>* flags = nullptr,
                             const GlmOptions& opts = GlmOptions{}, int threads = 1) {
  if (arm != 0 && arm != 1) throw ParameterError("arm must be 0 or 1");
  if (power != 1 && power != 2) throw ParameterError("power must be 1 or 2");
  const auto arm_rows = table.arm_rows(arm);
  if (arm_rows.empty()) throw ParameterError("arm subsample is empty");
  const Mat x_arm = nuisance_detail::rows_of(table.covariates, arm_rows);
  Mat mu(table.n(), table.p());
  std::vector<ColumnFlags> local(static_cast<std::size_t>(table.p()));
  parallel_for(table.p(), threads, [&](int j) {
    Vec y(static_cast<Eigen::Index>(arm_rows.size()));
    for (std::size_t i = 0; i < arm_rows.size(); ++i) {
      const double v = table.outcomes(arm_rows[i], j);
      y[static_cast<Eigen::Index>(i)] = power == 1 ? v : v * v;
    }
    const double ylo = y.minCoeff(), yhi = y.maxCoeff();
    if (ylo == yhi) {
      mu.col(j).setConstant(ylo);
      return;
    }
    GlmFit fit;
    try {
      fit = fit_glm(x_arm, y, family, std::nullopt, opts);
    } catch (const Error&) {
      local[static_cast<std::size_t>(j)].fit_failed = true;
      mu.col(j).setConstant(y.mean());
      return;
    }
    if (!fit.converged) local[static_cast<std::size_t>(j)].fit_failed = true;
    Vec pred = predict_glm(fit, table.covariates, std::nullopt, /*allow_unconverged=*/true);
    const bool clamped = (pred.array() < ylo).any() || (pred.array() > yhi).any();
    if (clamped) local[static_cast<std::size_t>(j)].clamped_nuisance = true;
    mu.col(j) = pred.cwiseMax(ylo).cwiseMin(yhi);
  });
  if (flags) {
    flags->resize(static_cast<std::size_t>(table.p()));
    for (int j = 0; j < table.p(); ++j) (*flags)[static_cast<std::size_t>(j)].merge(local[static_cast<std::size_t>(j)]);
  }
  return mu;
}

inline Vec default_cdf_grid(const std::vector<double>& arm_values, int points) {
  if (points < 1) throw ParameterError("cdf grid needs at least one point");
  std::vector<double> sorted = arm_values;
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<long>(sorted.size());
  std::vector<double> grid;
  for (int g = 0; g < points; ++g) {
    const double level = points == 1 ? 0.5 : 0.01 + 0.98 * static_cast<double>(g) / (points - 1);
    long idx = static_cast<long>(std::ceil(level * static_cast<double>(n))) - 1;
    idx = std::max(0L, std::min(idx, n - 1));
    const double v = sorted[static_cast<std::size_t>(idx)];
    if (grid.empty() || v > grid.back()) grid.push_back(v);
  }
  return Eigen::Map<const Vec>(grid.data(), static_cast<Eigen::Index>(grid.size()));
}

// Assembles the evaluator from raw per-grid-point predictions: pads with
// (lo, 0) and (hi, 1), then enforces monotonicity by a running maximum.
inline CdfEvaluator build_cdf_evaluator(const Vec& grid, const Mat& fitted, double lo, double hi) {
  const Eigen::Index n = fitted.rows();
  std::vector<double> knots;
  std::vector<int> source;  // fitted column per kept knot, -1 for pads
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    if (grid[g] >= lo && grid[g] < hi) {
      knots.push_back(grid[g]);
      source.push_back(static_cast<int>(g));
    }
  }
  if (knots.empty() || knots.front() > lo) {
    knots.insert(knots.begin(), lo);
    source.insert(source.begin(), -1);
  }
  knots.push_back(hi);
  source.push_back(-2);

  CdfEvaluator ev;
  ev.lo = lo;
  ev.hi = hi;
  ev.knots = Eigen::Map<const Vec>(knots.data(), static_cast<Eigen::Index>(knots.size()));
  ev.values.resize(n, static_cast<Eigen::Index>(knots.size()));
  for (std::size_t c = 0; c < source.size(); ++c) {
    if (source[c] == -1) {
      ev.values.col(static_cast<Eigen::Index>(c)).setZero();
    } else if (source[c] == -2) {
      ev.values.col(static_cast<Eigen::Index>(c)).setOnes();
    } else {
      ev.values.col(static_cast<Eigen::Index>(c)) =
          fitted.col(source[c]).cwiseMax(0.0).cwiseMin(1.0);
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    double running = 0.0;
    for (Eigen::Index c = 0; c < ev.values.cols(); ++c) {
      running = std::max(running, ev.values(i, c));
      ev.values(i, c) = running;
    }
  }
  return ev;
}

// Distribution regression: one logistic fit of 1{Y_j <= theta} per grid point.
inline CdfEvaluator fit_conditional_cdf(const ObservationTable& table, int arm, int outcome,
                                        const Vec& theta_grid,
                                        const GlmOptions& opts = GlmOptions{}) {
  if (theta_grid.size() == 0) throw ParameterError("fit_conditional_cdf: empty grid");
  for (Eigen::Index g = 1; g < theta_grid.size(); ++g) {
    if (!(theta_grid[g] > theta_grid[g - 1])) {
      throw ParameterError("fit_conditional_cdf: grid must be strictly increasing");
    }
  }
  const auto arm_rows = table.arm_rows(arm);
  if (arm_rows.empty()) throw ParameterError("fit_conditional_cdf: arm subsample is empty");
  const Mat x_arm = nuisance_detail::rows_of(table.covariates, arm_rows);
  double lo = table.outcomes(arm_rows[0], outcome), hi = lo;
  for (int r : arm_rows) {
    lo = std::min(lo, table.outcomes(r, outcome));
    hi = std::max(hi, table.outcomes(r, outcome));
  }
  Mat fitted(table.n(), theta_grid.size());
  Vec indicator(static_cast<Eigen::Index>(arm_rows.size()));
  for (Eigen::Index g = 0; g < theta_grid.size(); ++g) {
    const double theta = theta_grid[g];
    for (std::size_t i = 0; i < arm_rows.size(); ++i) {
      indicator[static_cast<Eigen::Index>(i)] = table.outcomes(arm_rows[i], outcome) <= theta ? 1.0 : 0.0;
    }
    const double frac = indicator.mean();
    if (frac == 0.0 || frac == 1.0) {
      fitted.col(g).setConstant(frac);
      continue;
    }
    const GlmFit fit = fit_glm(x_arm, indicator, GlmFamily::kLogistic, std::nullopt, opts);
    fitted.col(g) = predict_glm(fit, table.covariates, std::make_pair(0.0, 1.0),
                                /*allow_unconverged=*/true);
  }
  return build_cdf_evaluator(theta_grid, fitted, lo, hi);
}

// Initial IPW quantile: smallest arm-a outcome value whose normalized
// cumulative 1/pi_a weight reaches rho.
inline double ipw_quantile_init(const ObservationTable& table, const Vec& pi1, int arm, int outcome,
                                double rho) {
  if (!(rho > 0.0 && rho < 1.0)) throw ParameterError("rho must be in (0, 1)");
  const auto arm_rows = table.arm_rows(arm);
  if (arm_rows.empty()) throw ComputationError("ipw_quantile_init: no subjects in arm");
  std::vector<std::pair<double, double>> value_weight;
  value_weight.reserve(arm_rows.size());
  double total = 0.0;
  for (int r : arm_rows) {
    const double pi = arm == 1 ? pi1[r] : 1.0 - pi1[r];
    if (!(pi > 0.0)) throw ComputationError("ipw_quantile_init: zero propensity weight");
    const double w = 1.0 / pi;
    value_weight.emplace_back(table.outcomes(r, outcome), w);
    total += w;
  }
  if (!(total > 0.0)) throw ComputationError("ipw_quantile_init: total IPW weight is zero");
  std::sort(value_weight.begin(), value_weight.end());
  double cum = 0.0;
  for (const auto& [value, weight] : value_weight) {
    cum += weight;
    if (cum / total >= rho) return value;
  }
  return value_weight.back().first;
}

inline double silverman_bandwidth(const std::vector<double>& arm_values) {
  const auto n = static_cast<double>(arm_values.size());
  if (arm_values.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : arm_values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : arm_values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  return 1.06 * sd * std::pow(n, -0.2);
}

inline std::vector<double> arm_outcome_values(const ObservationTable& table, int arm, int outcome) {
  std::vector<double> values;
  for (int i = 0; i < table.n(); ++i) {
    if (table.treatment[i] == arm) values.push_back(table.outcomes(i, outcome));
  }
  return values;
}

struct DensityEstimate {
  double value = 0.0;
  bool floored = false;
};

// Doubly robust kernel density of Y_j(a) at y, Gaussian kernel. mu_col holds
// mu_{a1j}(W_i) for every subject.
inline DensityEstimate dr_density(const ObservationTable& table, const Vec& pi1, const Vec& mu_col,
                                  int arm, int outcome, double y, double bandwidth,
                                  double density_floor = 0.01) {
  if (!(bandwidth > 0.0)) throw ParameterError("dr_density: bandwidth must be positive");
  using nuisance_detail::gaussian_kernel;
  const int n = table.n();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double k_mu = gaussian_kernel((y - mu_col[i]) / bandwidth);
    double term = k_mu;
    if (table.treatment[i] == arm) {
      const double pi = arm == 1 ? pi1[i] : 1.0 - pi1[i];
      const double k_y = gaussian_kernel((y - table.outcomes(i, outcome)) / bandwidth);
      term += (k_y - k_mu) / pi;
    }
    acc += term;
  }
  DensityEstimate est;
  est.value = acc / (static_cast<double>(n) * bandwidth);
  if (est.value < density_floor) {
    est.value = density_floor;
    est.floored = true;
  }
  return est;
}

// ---------------------------------------------------------------------------
// Assembled nuisance fitting with optional K-fold cross-fitting.

struct NuisanceNeeds {
  bool mu_k1 = false;       // mu_{a1j}, both arms
  bool mu_k2_arm0 = false;  // mu_{02j} for the STE denominator
  bool cdf = false;         // conditional CDFs, both arms

  static NuisanceNeeds for_estimands(const std::vector<EstimandKind>& estimands) {
    NuisanceNeeds needs;
    for (EstimandKind e : estimands) {
      switch (e) {
        case EstimandKind::kAte:
          needs.mu_k1 = true;
          break;
        case EstimandKind::kSte:
          needs.mu_k1 = true;
          needs.mu_k2_arm0 = true;
          break;
        case EstimandKind::kQte:
        case EstimandKind::kSqte:
          needs.mu_k1 = true;  // dr_density evaluates kernels at mu_{a1j}
          needs.cdf = true;
          break;
      }
    }
    return needs;
  }
};

namespace nuisance_detail {

struct CdfWorkspace {
  Vec grid;
  double lo = 0.0, hi = 0.0;
  Mat fitted;  // n x grid
};

inline void fit_fold(const ObservationTable& table, const NuisanceConfig& cfg,
                     const NuisanceNeeds& needs, const std::vector<int>& train,
                     const std::vector<int>& eval, int threads, NuisanceFit& out,
                     std::array<std::vector<CdfWorkspace>, 2>& cdf_work) {
  const Mat x_train = rows_of(table.covariates, train);
  const Mat x_eval = rows_of(table.covariates, eval);
  const int p = table.p();

  {  // propensity
    Vec a_train(static_cast<Eigen::Index>(train.size()));
    for (std::size_t i = 0; i < train.size(); ++i) a_train[static_cast<Eigen::Index>(i)] = table.treatment[train[i]];
    const GlmFit fit = fit_glm(x_train, a_train, GlmFamily::kLogistic, std::nullopt, cfg.glm);
    if (!fit.converged) {
      throw ComputationError(std::string("propensity fit did not converge") +
                             (fit.separated ? " (perfect separation)" : ""));
    }
    const Vec pred = predict_glm(fit, x_eval, std::make_pair(cfg.epsilon, 1.0 - cfg.epsilon));
    for (std::size_t i = 0; i < eval.size(); ++i) out.pi1[eval[i]] = pred[static_cast<Eigen::Index>(i)];
  }

  struct MuJob {
    int arm;
    int power;
    GlmFamily family;
  };
  std::vector<MuJob> jobs;
  if (needs.mu_k1) {
    jobs.push_back({0, 1, cfg.outcome_family});
    jobs.push_back({1, 1, cfg.outcome_family});
  }
  if (needs.mu_k2_arm0) jobs.push_back({0, 2, cfg.y2_family});

  for (const auto& job : jobs) {
    auto& slot = out.mu[job.arm][job.power - 1];
    if (slot.size() == 0) slot.resize(table.n(), p);
    const auto train_arm = intersect_arm(table, train, job.arm);
    if (static_cast<Eigen::Index>(train_arm.size()) < table.covariates.cols()) {
      throw FoldError("training subsample for arm " + std::to_string(job.arm) +
                      " is smaller than the covariate dimension; use a larger n or a smaller K");
    }
    const Mat x_arm = rows_of(table.covariates, train_arm);
    std::vector<ColumnFlags> local(static_cast<std::size_t>(p));
    parallel_for(p, threads, [&](int j) {
      Vec y(static_cast<Eigen::Index>(train_arm.size()));
      for (std::size_t i = 0; i < train_arm.size(); ++i) {
        const double v = table.outcomes(train_arm[i], j);
        y[static_cast<Eigen::Index>(i)] = job.power == 1 ? v : v * v;
      }
      const double ylo = y.minCoeff(), yhi = y.maxCoeff();
      Vec pred;
      if (ylo == yhi) {
        pred = Vec::Constant(x_eval.rows(), ylo);
      } else {
        GlmFit fit;
        bool failed = false;
        try {
          fit = fit_glm(x_arm, y, job.family, std::nullopt, cfg.glm);
        } catch (const Error&) {
          failed = true;
        }
        if (failed) {
          local[static_cast<std::size_t>(j)].fit_failed = true;
          pred = Vec::Constant(x_eval.rows(), y.mean());
        } else {
          if (!fit.converged) local[static_cast<std::size_t>(j)].fit_failed = true;
          pred = predict_glm(fit, x_eval, std::nullopt, /*allow_unconverged=*/true);
          if ((pred.array() < ylo).any() || (pred.array() > yhi).any()) {
            local[static_cast<std::size_t>(j)].clamped_nuisance = true;
            pred = pred.cwiseMax(ylo).cwiseMin(yhi);
          }
        }
      }
      for (std::size_t i = 0; i < eval.size(); ++i) slot(eval[i], j) = pred[static_cast<Eigen::Index>(i)];
    });
    for (int j = 0; j < p; ++j) out.flags[static_cast<std::size_t>(j)].merge(local[static_cast<std::size_t>(j)]);
  }

  if (needs.cdf) {
    for (int arm = 0; arm < 2; ++arm) {
      const auto train_arm = intersect_arm(table, train, arm);
      if (static_cast<Eigen::Index>(train_arm.size()) < table.covariates.cols()) {
        throw FoldError("training subsample for arm " + std::to_string(arm) +
                        " is smaller than the covariate dimension; use a larger n or a smaller K");
      }
      const Mat x_arm = rows_of(table.covariates, train_arm);
      parallel_for(p, threads, [&](int j) {
        auto& work = cdf_work[arm][static_cast<std::size_t>(j)];
        Vec indicator(static_cast<Eigen::Index>(train_arm.size()));
        for (Eigen::Index g = 0; g < work.grid.size(); ++g) {
          const double theta = work.grid[g];
          for (std::size_t i = 0; i < train_arm.size(); ++i) {
            indicator[static_cast<Eigen::Index>(i)] =
                table.outcomes(train_arm[i], j) <= theta ? 1.0 : 0.0;
          }
          const double frac = indicator.mean();
          Vec pred;
          if (frac == 0.0 || frac == 1.0) {
            pred = Vec::Constant(x_eval.rows(), frac);
          } else {
            const GlmFit fit = fit_glm(x_arm, indicator, GlmFamily::kLogistic, std::nullopt, cfg.glm);
            pred = predict_glm(fit, x_eval, std::make_pair(0.0, 1.0), /*allow_unconverged=*/true);
          }
          for (std::size_t i = 0; i < eval.size(); ++i) work.fitted(eval[i], g) = pred[static_cast<Eigen::Index>(i)];
        }
      });
    }
  }
}

}  // namespace nuisance_detail

inline NuisanceFit fit_nuisance(const ObservationTable& table, const NuisanceConfig& cfg,
                                const NuisanceNeeds& needs, int threads = 1) {
  if (!(cfg.epsilon > 0.0 && cfg.epsilon < 0.5)) throw ParameterError("epsilon must be in (0, 0.5)");
  const int n = table.n(), p = table.p();

  // Shared grids keep fold-wise CDF fits on identical knots.
  std::array<std::vector<nuisance_detail::CdfWorkspace>, 2> cdf_work;
  if (needs.cdf) {
    for (int arm = 0; arm < 2; ++arm) {
      cdf_work[arm].resize(static_cast<std::size_t>(p));
      for (int j = 0; j < p; ++j) {
        auto& work = cdf_work[arm][static_cast<std::size_t>(j)];
        const auto values = arm_outcome_values(table, arm, j);
        work.grid = default_cdf_grid(values, cfg.cdf_grid_points);
        work.lo = *std::min_element(values.begin(), values.end());
        work.hi = *std::max_element(values.begin(), values.end());
        work.fitted.resize(n, work.grid.size());
      }
    }
  }

  NuisanceFit fit;
  fit.epsilon = cfg.epsilon;
  fit.pi1 = Vec::Zero(n);
  fit.flags.assign(static_cast<std::size_t>(p), ColumnFlags{});

  if (cfg.crossfit_k == 0) {
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    nuisance_detail::fit_fold(table, cfg, needs, all, all, threads, fit, cdf_work);
  } else {
    const IntVec folds = crossfit_folds(n, cfg.crossfit_k, cfg.seed);
    fit.folds = folds;
    for (const auto& split : fold_splits(folds, cfg.crossfit_k)) {
      bool has0 = false, has1 = false;
      for (int r : split.train) {
        has0 = has0 || table.treatment[r] == 0;
        has1 = has1 || table.treatment[r] == 1;
      }
      if (!has0 || !has1) {
        throw FoldError("a cross-fitting training complement is missing a treatment arm; "
                        "use a larger n or a smaller K");
      }
      nuisance_detail::fit_fold(table, cfg, needs, split.train, split.eval, threads, fit, cdf_work);
    }
  }

  if (needs.cdf) {
    for (int arm = 0; arm < 2; ++arm) {
      fit.cdf[arm].resize(static_cast<std::size_t>(p));
      for (int j = 0; j < p; ++j) {
        auto& work = cdf_work[arm][static_cast<std::size_t>(j)];
        fit.cdf[arm][static_cast<std::size_t>(j)] =
            build_cdf_evaluator(work.grid, work.fitted, work.lo, work.hi);
      }
    }
  }
  return fit;
}

}  // namespace drmo

#endif  // DRMO_NUISANCE_HPP
