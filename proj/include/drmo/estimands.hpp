#ifndef DRMO_ESTIMANDS_HPP
#define DRMO_ESTIMANDS_HPP

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "drmo/common.hpp"
#include "drmo/data_model.hpp"
#include "drmo/nuisance.hpp"
#include "drmo/parallel.hpp"

namespace drmo {

inline constexpr double kSteVarFloor = 1e-12;
inline constexpr double kIqrFloor = 1e-8;

// Estimated centered influence values with per-outcome standard deviations.
struct InfluenceMatrix {
  EstimandKind estimand = EstimandKind::kAte;
  Mat values;  // n x p, each column exactly centered
  Vec sigma;   // denominator-n standard deviation per column
  std::vector<ColumnFlags> column_flags;

  int n() const { return static_cast<int>(values.rows()); }
  int p() const { return static_cast<int>(values.cols()); }
};

struct SteComponents {
  Vec beta0;  // DR estimate of E[Y_j(0)]
  Vec beta1;  // DR estimate of E[Y_j(1)]
  Vec beta2;  // DR estimate of E[Y_j(0)^2]
};

struct QteComponents {
  Vec theta0, theta1;            // one-step counterfactual quantiles
  Vec f0, f1;                    // density estimates at the initial quantiles
  Vec theta0_init, theta1_init;  // IPW initial quantiles
};

struct SqteComponents {
  QteComponents qte;
  Vec q25, q75;  // one-step control-arm quantiles
  Vec iqr;
};

struct EstimandResult {
  EstimandKind estimand = EstimandKind::kAte;
  int n = 0;
  Vec tau;
  Vec sigma;
  Vec t;  // sqrt(n) (tau - tau_null) / sigma
  Vec null_values;
  std::vector<ColumnFlags> flags;
  std::vector<std::string> outcome_names;
  std::optional<SteComponents> ste;
  std::optional<QteComponents> qte;
  std::optional<SqteComponents> sqte;
};

struct EstimateOutput {
  EstimandResult result;
  InfluenceMatrix influence;
};

// Uncentered DR component: 1{A=a}/pi_a(W) (Y_j^k - mu_akj(W)) + mu_akj(W).
inline Vec compute_phi(const ObservationTable& table, const NuisanceFit& nuisance, int arm,
                       int power, int outcome) {
  const Mat& mu = nuisance.mu_at(arm, power);
  const int n = table.n();
  Vec phi(n);
  for (int i = 0; i < n; ++i) {
    const double m = mu(i, outcome);
    double value = m;
    if (table.treatment[i] == arm) {
      const double y = table.outcomes(i, outcome);
      const double yk = power == 1 ? y : y * y;
      value += (yk - m) / nuisance.pi_at(arm, i);
    }
    phi[i] = value;
  }
  return phi;
}

namespace estimand_detail {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Centers the column in place, fills sigma/t, and flags sigma == 0.
inline void finalize_column(Vec& column, double tau, double tau_null, ColumnFlags& flags,
                            double& sigma_out, double& t_out) {
  const auto n = static_cast<double>(column.size());
  column.array() -= column.mean();
  const double var = column.squaredNorm() / n;
  sigma_out = std::sqrt(var);
  if (!(sigma_out > 0.0) || !std::isfinite(tau)) {
    flags.degenerate = true;
    t_out = kNaN;
    return;
  }
  t_out = std::sqrt(n) * (tau - tau_null) / sigma_out;
}

inline void mark_degenerate(Vec& column, ColumnFlags& flags, double& tau, double& sigma, double& t) {
  column.setZero();
  flags.degenerate = true;
  tau = kNaN;
  sigma = 0.0;
  t = kNaN;
}

inline EstimandResult make_result(EstimandKind kind, const ObservationTable& table,
                                  const NuisanceFit& nuisance, const Vec* null_values) {
  EstimandResult r;
  r.estimand = kind;
  r.n = table.n();
  const int p = table.p();
  r.tau = Vec::Zero(p);
  r.sigma = Vec::Zero(p);
  r.t = Vec::Zero(p);
  r.null_values = null_values ? *null_values : Vec(Vec::Zero(p));
  if (r.null_values.size() != p) throw ParameterError("null_values length != p");
  r.flags = nuisance.flags;
  if (r.flags.empty()) r.flags.assign(static_cast<std::size_t>(p), ColumnFlags{});
  r.outcome_names = table.outcome_names;
  return r;
}

}  // namespace estimand_detail

// tau_j = P_n[phi_11j - phi_01j]; the influence column is the centered contrast.
inline EstimateOutput estimate_ate(const ObservationTable& table, const NuisanceFit& nuisance,
                                   const Vec* null_values = nullptr, int threads = 1) {
  const int p = table.p();
  EstimandResult result = estimand_detail::make_result(EstimandKind::kAte, table, nuisance, null_values);
  InfluenceMatrix influence;
  influence.estimand = EstimandKind::kAte;
  influence.values.resize(table.n(), p);
  influence.sigma = Vec::Zero(p);

  parallel_for(p, threads, [&](int j) {
    Vec column = compute_phi(table, nuisance, 1, 1, j) - compute_phi(table, nuisance, 0, 1, j);
    auto& flags = result.flags[static_cast<std::size_t>(j)];
    if (flags.fit_failed) {
      estimand_detail::mark_degenerate(column, flags, result.tau[j], result.sigma[j], result.t[j]);
    } else {
      result.tau[j] = column.mean();
      estimand_detail::finalize_column(column, result.tau[j], result.null_values[j], flags,
                                       result.sigma[j], result.t[j]);
    }
    influence.values.col(j) = column;
    influence.sigma[j] = result.sigma[j];
  });
  influence.column_flags = result.flags;
  return {std::move(result), std::move(influence)};
}

// tau_j = (b1 - b0) / sqrt(b2 - b0^2) with DR component estimates; the
// influence column follows the delta-method expansion of that ratio.
inline EstimateOutput estimate_ste(const ObservationTable& table, const NuisanceFit& nuisance,
                                   const Vec* null_values = nullptr, int threads = 1) {
  const int p = table.p();
  EstimandResult result = estimand_detail::make_result(EstimandKind::kSte, table, nuisance, null_values);
  SteComponents comp{Vec::Zero(p), Vec::Zero(p), Vec::Zero(p)};
  InfluenceMatrix influence;
  influence.estimand = EstimandKind::kSte;
  influence.values.resize(table.n(), p);
  influence.sigma = Vec::Zero(p);

  parallel_for(p, threads, [&](int j) {
    auto& flags = result.flags[static_cast<std::size_t>(j)];
    const Vec phi01 = compute_phi(table, nuisance, 0, 1, j);
    const Vec phi11 = compute_phi(table, nuisance, 1, 1, j);
    const Vec phi02 = compute_phi(table, nuisance, 0, 2, j);
    const double b0 = phi01.mean(), b1 = phi11.mean(), b2 = phi02.mean();
    comp.beta0[j] = b0;
    comp.beta1[j] = b1;
    comp.beta2[j] = b2;
    const double denom = b2 - b0 * b0;
    Vec column = Vec::Zero(table.n());
    if (flags.fit_failed || denom < kSteVarFloor) {
      estimand_detail::mark_degenerate(column, flags, result.tau[j], result.sigma[j], result.t[j]);
    } else {
      const double sd0 = std::sqrt(denom);
      const double tau = (b1 - b0) / sd0;
      result.tau[j] = tau;
      column = (phi11 - phi01) / sd0 -
               (tau / (2.0 * denom)) * (phi02.array() + b2 - 2.0 * b0 * phi01.array()).matrix();
      estimand_detail::finalize_column(column, tau, result.null_values[j], flags, result.sigma[j],
                                       result.t[j]);
    }
    influence.values.col(j) = column;
    influence.sigma[j] = result.sigma[j];
  });
  result.ste = std::move(comp);
  influence.column_flags = result.flags;
  return {std::move(result), std::move(influence)};
}

struct QuantileOptions {
  double rho = 0.5;
  std::optional<double> bandwidth;  // empty = Silverman per outcome/arm
  double density_floor = 0.01;
};

namespace estimand_detail {

struct OneStepQuantile {
  double theta_init = kNaN;
  double theta = kNaN;
  double density = kNaN;
  bool density_floored = false;
  bool at_boundary_atom = false;  // initial quantile sits on the arm minimum
  Vec influence;                  // omega / f, uncentered
};

inline OneStepQuantile one_step_quantile(const ObservationTable& table, const NuisanceFit& nuisance,
                                         int arm, int outcome, double rho,
                                         const QuantileOptions& opts) {
  OneStepQuantile out;
  out.theta_init = ipw_quantile_init(table, nuisance.pi1, arm, outcome, rho);
  const auto arm_values = arm_outcome_values(table, arm, outcome);
  const double arm_min = *std::min_element(arm_values.begin(), arm_values.end());
  out.at_boundary_atom = out.theta_init == arm_min;

  double h = opts.bandwidth.value_or(silverman_bandwidth(arm_values));
  if (!(h > 0.0)) {
    out.influence = Vec::Zero(table.n());
    return out;  // degenerate arm distribution; caller decides
  }
  const Vec& mu_col_all = nuisance.mu_at(arm, 1).col(outcome);
  const DensityEstimate dens = dr_density(table, nuisance.pi1, mu_col_all, arm, outcome,
                                          out.theta_init, h, opts.density_floor);
  out.density = dens.value;
  out.density_floored = dens.floored;

  const Vec cdf_vals = nuisance.cdf_at(arm, outcome).at(out.theta_init);
  const int n = table.n();
  Vec omega(n);
  for (int i = 0; i < n; ++i) {
    const double nu = cdf_vals[i] - rho;
    double value = -nu;
    if (table.treatment[i] == arm) {
      const double psi = (table.outcomes(i, outcome) <= out.theta_init ? 1.0 : 0.0) - rho;
      value += (nu - psi) / nuisance.pi_at(arm, i);
    }
    omega[i] = value;
  }
  out.theta = out.theta_init + omega.mean() / out.density;
  out.influence = omega / out.density;
  return out;
}

}  // namespace estimand_detail

// One-step quantile update per arm (theta_init + P_n[omega]/f), contrast, and
// the influence column omega_1/f_1 - omega_0/f_0 evaluated at the initial
// estimates.
inline EstimateOutput estimate_qte(const ObservationTable& table, const NuisanceFit& nuisance,
                                   const QuantileOptions& opts = QuantileOptions{},
                                   const Vec* null_values = nullptr, int threads = 1) {
  if (!(opts.rho > 0.0 && opts.rho < 1.0)) throw ParameterError("rho must be in (0, 1)");
  const int p = table.p();
  EstimandResult result = estimand_detail::make_result(EstimandKind::kQte, table, nuisance, null_values);
  QteComponents comp{Vec::Zero(p), Vec::Zero(p), Vec::Zero(p), Vec::Zero(p), Vec::Zero(p), Vec::Zero(p)};
  InfluenceMatrix influence;
  influence.estimand = EstimandKind::kQte;
  influence.values.resize(table.n(), p);
  influence.sigma = Vec::Zero(p);

  parallel_for(p, threads, [&](int j) {
    auto& flags = result.flags[static_cast<std::size_t>(j)];
    const auto q0 = estimand_detail::one_step_quantile(table, nuisance, 0, j, opts.rho, opts);
    const auto q1 = estimand_detail::one_step_quantile(table, nuisance, 1, j, opts.rho, opts);
    comp.theta0_init[j] = q0.theta_init;
    comp.theta1_init[j] = q1.theta_init;
    comp.theta0[j] = q0.theta;
    comp.theta1[j] = q1.theta;
    comp.f0[j] = q0.density;
    comp.f1[j] = q1.density;
    flags.floored_density = flags.floored_density || q0.density_floored || q1.density_floored;
    // Zero-median style degeneracy: both initial quantiles pinned to the same
    // boundary atom carrying >= rho of the weight.
    const bool pinned = q0.at_boundary_atom && q1.at_boundary_atom && q0.theta_init == q1.theta_init;
    Vec column = Vec::Zero(table.n());
    if (flags.fit_failed || pinned || !std::isfinite(q0.theta) || !std::isfinite(q1.theta)) {
      estimand_detail::mark_degenerate(column, flags, result.tau[j], result.sigma[j], result.t[j]);
    } else {
      result.tau[j] = q1.theta - q0.theta;
      column = q1.influence - q0.influence;
      estimand_detail::finalize_column(column, result.tau[j], result.null_values[j], flags,
                                       result.sigma[j], result.t[j]);
    }
    influence.values.col(j) = column;
    influence.sigma[j] = result.sigma[j];
  });
  result.qte = std::move(comp);
  influence.column_flags = result.flags;
  return {std::move(result), std::move(influence)};
}

// QTE divided by the one-step control-arm IQR; influence by the quotient delta
// method over the three one-step quantile expansions.
inline EstimateOutput estimate_sqte(const ObservationTable& table, const NuisanceFit& nuisance,
                                    const QuantileOptions& opts = QuantileOptions{},
                                    const Vec* null_values = nullptr, int threads = 1) {
  if (!(opts.rho > 0.0 && opts.rho < 1.0)) throw ParameterError("rho must be in (0, 1)");
  const int p = table.p();
  EstimandResult result = estimand_detail::make_result(EstimandKind::kSqte, table, nuisance, null_values);
  SqteComponents comp;
  comp.qte = QteComponents{Vec::Zero(p), Vec::Zero(p), Vec::Zero(p), Vec::Zero(p), Vec::Zero(p), Vec::Zero(p)};
  comp.q25 = Vec::Zero(p);
  comp.q75 = Vec::Zero(p);
  comp.iqr = Vec::Zero(p);
  InfluenceMatrix influence;
  influence.estimand = EstimandKind::kSqte;
  influence.values.resize(table.n(), p);
  influence.sigma = Vec::Zero(p);

  parallel_for(p, threads, [&](int j) {
    auto& flags = result.flags[static_cast<std::size_t>(j)];
    const auto q0 = estimand_detail::one_step_quantile(table, nuisance, 0, j, opts.rho, opts);
    const auto q1 = estimand_detail::one_step_quantile(table, nuisance, 1, j, opts.rho, opts);
    const auto lo = estimand_detail::one_step_quantile(table, nuisance, 0, j, 0.25, opts);
    const auto hi = estimand_detail::one_step_quantile(table, nuisance, 0, j, 0.75, opts);
    comp.qte.theta0_init[j] = q0.theta_init;
    comp.qte.theta1_init[j] = q1.theta_init;
    comp.qte.theta0[j] = q0.theta;
    comp.qte.theta1[j] = q1.theta;
    comp.qte.f0[j] = q0.density;
    comp.qte.f1[j] = q1.density;
    comp.q25[j] = lo.theta;
    comp.q75[j] = hi.theta;
    comp.iqr[j] = hi.theta - lo.theta;
    flags.floored_density = flags.floored_density || q0.density_floored || q1.density_floored ||
                            lo.density_floored || hi.density_floored;
    const bool pinned = q0.at_boundary_atom && q1.at_boundary_atom && q0.theta_init == q1.theta_init;
    const double iqr = comp.iqr[j];
    Vec column = Vec::Zero(table.n());
    if (flags.fit_failed || pinned || !std::isfinite(iqr) || iqr < kIqrFloor ||
        !std::isfinite(q0.theta) || !std::isfinite(q1.theta)) {
      estimand_detail::mark_degenerate(column, flags, result.tau[j], result.sigma[j], result.t[j]);
    } else {
      const double qte = q1.theta - q0.theta;
      const double tau = qte / iqr;
      result.tau[j] = tau;
      column = (q1.influence - q0.influence) / iqr -
               (qte / (iqr * iqr)) * (hi.influence - lo.influence);
      estimand_detail::finalize_column(column, tau, result.null_values[j], flags, result.sigma[j],
                                       result.t[j]);
    }
    influence.values.col(j) = column;
    influence.sigma[j] = result.sigma[j];
  });
  result.sqte = std::move(comp);
  influence.column_flags = result.flags;
  return {std::move(result), std::move(influence)};
}

// Per-column empirical variance with denominator n (the P_n convention).
inline Vec variance_from_influence(const InfluenceMatrix& influence) {
  if (influence.n() < 2) throw ParameterError("variance needs n >= 2");
  const auto n = static_cast<double>(influence.n());
  Vec out(influence.p());
  for (int j = 0; j < influence.p(); ++j) {
    const Vec& col = influence.values.col(j);
    const double mean = col.mean();
    out[j] = (col.array() - mean).square().sum() / n;
  }
  return out;
}

}  // namespace drmo

#endif  // DRMO_ESTIMANDS_HPP
