#ifndef DRMO_TESTING_HPP
#define DRMO_TESTING_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "drmo/common.hpp"
#include "drmo/estimands.hpp"
#include "drmo/rng.hpp"

namespace drmo {

struct StepdownParams {
  double c = 0.1;        // FDP threshold
  double alpha = 0.05;   // exceedance probability
  int bootstrap_b = 1000;
  double screen_cn = 0.01;
  std::uint64_t seed = 0;
};

struct StepdownStep {
  int removed_index = -1;  // -1 on the final, non-rejecting iteration
  double max_stat = 0.0;
  double quantile = 0.0;
};

struct DiscoverySet {
  std::vector<int> candidate_set;  // after variance screening
  std::vector<int> discoveries;    // step-down order, then augmented
  std::vector<StepdownStep> trace;
  int augmented_count = 0;
  StepdownParams params;
};

// Indices with sigma_j^2 >= c_n, original order. NaN sigmas never pass.
inline std::vector<int> screen_by_variance(const Vec& sigma, double c_n) {
  if (c_n < 0.0) throw ParameterError("screen threshold must be >= 0");
  std::vector<int> kept;
  for (int j = 0; j < sigma.size(); ++j) {
    if (sigma[j] * sigma[j] >= c_n) kept.push_back(j);
  }
  return kept;
}

namespace testing_detail {

// Degenerate outcomes are excluded before any test, then the variance screen
// is applied.
inline std::vector<int> candidate_set(const EstimandResult& result, double c_n) {
  std::vector<int> kept;
  for (int j = 0; j < result.sigma.size(); ++j) {
    const auto& flags = result.flags[static_cast<std::size_t>(j)];
    if (flags.degenerate) continue;
    if (!std::isfinite(result.t[j])) continue;
    if (result.sigma[j] * result.sigma[j] >= c_n) kept.push_back(j);
  }
  return kept;
}

}  // namespace testing_detail

// Multiplier-bootstrap max statistics: for each replicate b, draw n standard
// normal multipliers and take max_j |(sqrt(n) sigma_j)^{-1} sum_i eps_i phi_ij|
// over the subset. Multiplier streams depend only on (seed, b), so the draws
// are identical for any subset and any parallelism degree.
inline Vec bootstrap_max_stats(const InfluenceMatrix& influence, const std::vector<int>& subset,
                               int replicates, std::uint64_t seed) {
  if (subset.empty()) throw ParameterError("bootstrap needs a non-empty set");
  if (replicates < 1) throw ParameterError("bootstrap needs B >= 1");
  const int n = influence.n();
  const auto s = static_cast<Eigen::Index>(subset.size());
  Mat scaled(n, s);
  const double root_n = std::sqrt(static_cast<double>(n));
  for (Eigen::Index c = 0; c < s; ++c) {
    const int j = subset[static_cast<std::size_t>(c)];
    const double sigma = influence.sigma[j];
    if (!(sigma > 0.0)) {
      throw ParameterError("bootstrap requires sigma > 0 on the candidate set (outcome " +
                           std::to_string(j + 1) + ")");
    }
    scaled.col(c) = influence.values.col(j) / (root_n * sigma);
  }

  constexpr int kChunk = 2048;
  Vec stats(replicates);
  Mat mult(n, kChunk);
  Mat g;
  for (int start = 0; start < replicates; start += kChunk) {
    const int width = std::min(kChunk, replicates - start);
    for (int b = 0; b < width; ++b) {
      rng::Rng gen(rng::derive_seed(seed, static_cast<std::uint64_t>(start + b)));
      for (int i = 0; i < n; ++i) mult(i, b) = gen.normal();
    }
    g.noalias() = scaled.transpose() * mult.leftCols(width);
    for (int b = 0; b < width; ++b) {
      stats[start + b] = g.col(b).cwiseAbs().maxCoeff();
    }
  }
  return stats;
}

// Right-continuous empirical upper-alpha quantile:
// inf { x : (1/B) sum 1{stat_b <= x} >= 1 - alpha }.
inline double empirical_upper_quantile(Vec stats, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must be in (0, 1)");
  std::sort(stats.data(), stats.data() + stats.size());
  const auto b = static_cast<double>(stats.size());
  auto k = static_cast<Eigen::Index>(std::ceil((1.0 - alpha) * b - 1e-9));
  k = std::max<Eigen::Index>(1, std::min<Eigen::Index>(k, stats.size()));
  return stats[k - 1];
}

inline double bootstrap_max_quantile(const InfluenceMatrix& influence, const std::vector<int>& subset,
                                     double alpha, int replicates, std::uint64_t seed) {
  return empirical_upper_quantile(bootstrap_max_stats(influence, subset, replicates, seed), alpha);
}

// Step-down multiplier-bootstrap testing with augmentation. Each iteration
// draws a fresh bootstrap (seed + iteration); argmax ties break to the
// smallest outcome index.
inline DiscoverySet stepdown_fdx(const EstimandResult& result, const InfluenceMatrix& influence,
                                 const StepdownParams& params) {
  if (!(params.c > 0.0 && params.c < 1.0)) throw ParameterError("FDP threshold c must be in (0, 1)");
  if (!(params.alpha > 0.0 && params.alpha < 1.0)) throw ParameterError("alpha must be in (0, 1)");
  if (result.t.size() != influence.p()) throw ParameterError("result/influence dimensions differ");
  DiscoverySet out;
  out.params = params;
  out.candidate_set = testing_detail::candidate_set(result, params.screen_cn);
  if (out.candidate_set.empty()) return out;

  std::vector<int> active = out.candidate_set;
  std::uint64_t iteration = 1;
  while (!active.empty()) {
    const double quantile = bootstrap_max_quantile(influence, active, params.alpha,
                                                   params.bootstrap_b, params.seed + iteration);
    int argmax = active.front();
    double max_stat = -1.0;
    for (int j : active) {
      const double stat = std::abs(result.t[j]);
      if (stat > max_stat) {
        max_stat = stat;
        argmax = j;
      }
    }
    if (max_stat > quantile) {
      out.trace.push_back({argmax, max_stat, quantile});
      out.discoveries.push_back(argmax);
      active.erase(std::find(active.begin(), active.end(), argmax));
      ++iteration;
    } else {
      out.trace.push_back({-1, max_stat, quantile});
      break;
    }
  }

  // Augmentation: floor(|V| c / (1-c)) of the remaining largest |t_j|.
  const auto pre = static_cast<long>(out.discoveries.size());
  long add = static_cast<long>(std::floor(static_cast<double>(pre) * params.c / (1.0 - params.c)));
  add = std::min(add, static_cast<long>(active.size()));
  std::stable_sort(active.begin(), active.end(), [&](int a, int b) {
    return std::abs(result.t[a]) > std::abs(result.t[b]);
  });
  for (long k = 0; k < add; ++k) {
    out.discoveries.push_back(active[static_cast<std::size_t>(k)]);
  }
  out.augmented_count = static_cast<int>(add);
  return out;
}

// Single-bootstrap FWER test: reject every |t_j| above the first-iteration
// quantile, so it agrees with step-down's first rejection decision.
inline std::vector<int> fwer_test(const EstimandResult& result, const InfluenceMatrix& influence,
                                  double alpha, int replicates, double screen_cn,
                                  std::uint64_t seed) {
  const auto active = testing_detail::candidate_set(result, screen_cn);
  if (active.empty()) return {};
  const double quantile = bootstrap_max_quantile(influence, active, alpha, replicates, seed + 1);
  std::vector<int> rejected;
  for (int j : active) {
    if (std::abs(result.t[j]) > quantile) rejected.push_back(j);
  }
  return rejected;
}

// Classic BH step-up. Returns rejected indices in ascending order.
inline std::vector<int> bh_procedure(const Vec& pvalues, double q) {
  if (!(q > 0.0 && q < 1.0)) throw ParameterError("BH level q must be in (0, 1)");
  const auto p = static_cast<int>(pvalues.size());
  for (int j = 0; j < p; ++j) {
    if (!(pvalues[j] >= 0.0 && pvalues[j] <= 1.0)) {
      throw ParameterError("p-values must lie in [0, 1]");
    }
  }
  std::vector<int> order(static_cast<std::size_t>(p));
  for (int j = 0; j < p; ++j) order[static_cast<std::size_t>(j)] = j;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return pvalues[a] < pvalues[b]; });
  int cutoff = 0;
  for (int k = 1; k <= p; ++k) {
    if (pvalues[order[static_cast<std::size_t>(k - 1)]] <=
        static_cast<double>(k) * q / static_cast<double>(p)) {
      cutoff = k;
    }
  }
  std::vector<int> rejected(order.begin(), order.begin() + cutoff);
  std::sort(rejected.begin(), rejected.end());
  return rejected;
}

// Two-sided normal p-value of t; degenerate (NaN) statistics map to 1.
inline double two_sided_pvalue(double t) {
  if (!std::isfinite(t)) return 1.0;
  return std::erfc(std::abs(t) / std::sqrt(2.0));
}

inline Vec two_sided_pvalues(const Vec& t) {
  Vec out(t.size());
  for (int j = 0; j < t.size(); ++j) out[j] = two_sided_pvalue(t[j]);
  return out;
}

struct ErrorMetrics {
  double fdp = 0.0;
  bool exceed = false;
  double power = 0.0;
};

inline ErrorMetrics error_metrics(const std::vector<int>& discoveries,
                                  const std::vector<int>& truth, double c) {
  std::vector<int> v = discoveries, t = truth;
  std::sort(v.begin(), v.end());
  std::sort(t.begin(), t.end());
  std::vector<int> hit;
  std::set_intersection(v.begin(), v.end(), t.begin(), t.end(), std::back_inserter(hit));
  ErrorMetrics m;
  const auto false_count = static_cast<double>(v.size() - hit.size());
  m.fdp = false_count / std::max<std::size_t>(1, v.size());
  m.exceed = m.fdp > c;
  m.power = static_cast<double>(hit.size()) / std::max<std::size_t>(1, t.size());
  return m;
}

}  // namespace drmo

#endif  // DRMO_TESTING_HPP
