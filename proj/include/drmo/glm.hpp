#ifndef DRMO_GLM_HPP
#define DRMO_GLM_HPP

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "drmo/common.hpp"

namespace drmo {

enum class GlmFamily { kLogistic, kPoissonLog, kGaussianIdentity };

inline const char* family_name(GlmFamily f) {
  switch (f) {
    case GlmFamily::kLogistic: return "logistic";
    case GlmFamily::kPoissonLog: return "poisson_log";
    case GlmFamily::kGaussianIdentity: return "gaussian_identity";
  }
  return "?";
}

inline GlmFamily family_from_name(const std::string& name) {
  if (name == "logistic") return GlmFamily::kLogistic;
  if (name == "poisson_log") return GlmFamily::kPoissonLog;
  if (name == "gaussian_identity") return GlmFamily::kGaussianIdentity;
  throw ParameterError("unknown GLM family '" + name + "'");
}

struct GlmOptions {
  int max_iter = 100;
  double tol = 1e-8;  // convergence on max-abs score, scaled by n
  double weight_floor = 1e-10;
  double ridge = 1e-8;              // jitter added to the normal equations when rank-deficient
  double separation_cutoff = 30.0;  // |linear predictor| beyond which a logistic fit is separated
};

struct GlmFit {
  GlmFamily family = GlmFamily::kGaussianIdentity;
  Vec coefficients;
  bool converged = false;
  int iterations = 0;
  double final_deviance = std::numeric_limits<double>::quiet_NaN();
  double weight_floor = 0.0;
  bool rank_deficient = false;
  bool separated = false;
  std::vector<double> deviance_path;  // deviance after each accepted IRLS step
};

namespace glm_detail {

inline double sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double safe_exp(double x) { return std::exp(std::min(x, 500.0)); }

inline Vec mean_from_eta(const Vec& eta, GlmFamily family) {
  switch (family) {
    case GlmFamily::kLogistic:
      return eta.unaryExpr([](double v) { return sigmoid(v); });
    case GlmFamily::kPoissonLog:
      return eta.unaryExpr([](double v) { return safe_exp(v); });
    case GlmFamily::kGaussianIdentity:
      return eta;
  }
  return eta;
}

inline double deviance(const Vec& y, const Vec& mu, const Vec& w, GlmFamily family) {
  double dev = 0.0;
  const auto n = y.size();
  switch (family) {
    case GlmFamily::kLogistic:
      for (Eigen::Index i = 0; i < n; ++i) {
        const double m = std::min(std::max(mu[i], 1e-15), 1.0 - 1e-15);
        dev += -2.0 * w[i] * (y[i] * std::log(m) + (1.0 - y[i]) * std::log1p(-m));
      }
      return dev;
    case GlmFamily::kPoissonLog:
      for (Eigen::Index i = 0; i < n; ++i) {
        const double m = std::max(mu[i], 1e-300);
        const double yl = y[i] > 0 ? y[i] * std::log(y[i] / m) : 0.0;
        dev += 2.0 * w[i] * (yl - (y[i] - m));
      }
      return dev;
    case GlmFamily::kGaussianIdentity:
      for (Eigen::Index i = 0; i < n; ++i) {
        const double r = y[i] - mu[i];
        dev += w[i] * r * r;
      }
      return dev;
  }
  return dev;
}

// For the canonical links used here the score is X^T ((y - mu) .* w).
inline double max_abs_score(const Mat& x, const Vec& y, const Vec& mu, const Vec& w) {
  const Vec score = x.transpose() * ((y - mu).cwiseProduct(w));
  return score.cwiseAbs().maxCoeff();
}

inline void check_response(const Vec& y, GlmFamily family) {
  switch (family) {
    case GlmFamily::kLogistic:
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) {
          throw ParameterError("logistic response must be 0/1; element " + std::to_string(i + 1) +
                               " is " + std::to_string(y[i]));
        }
      }
      break;
    case GlmFamily::kPoissonLog:
      if ((y.array() < 0.0).any()) throw ParameterError("poisson_log response must be >= 0");
      break;
    case GlmFamily::kGaussianIdentity:
      break;
  }
}

// Warm start through the intercept when the design carries one.
inline Vec initial_coefficients(const Mat& x, const Vec& y, const Vec& w, GlmFamily family) {
  Vec beta = Vec::Zero(x.cols());
  if (x.cols() == 0 || !(x.col(0).array() == 1.0).all()) return beta;
  const double wsum = w.sum();
  if (wsum <= 0) return beta;
  const double ybar = y.dot(w) / wsum;
  switch (family) {
    case GlmFamily::kLogistic: {
      const double p = std::min(std::max(ybar, 1e-6), 1.0 - 1e-6);
      beta[0] = std::log(p / (1.0 - p));
      break;
    }
    case GlmFamily::kPoissonLog:
      beta[0] = std::log(std::max(ybar, 1e-6));
      break;
    case GlmFamily::kGaussianIdentity:
      beta[0] = ybar;
      break;
  }
  return beta;
}

}  // namespace glm_detail

// Weighted IRLS with step-halving. Deterministic given inputs; never returns
// NaN coefficients. Rank-deficient designs fall back to a ridge-jittered solve
// and are flagged.
inline GlmFit fit_glm(const Mat& design, const Vec& response, GlmFamily family,
                      const std::optional<Vec>& weights = std::nullopt,
                      const GlmOptions& opts = GlmOptions{}) {
  using namespace glm_detail;
  const Eigen::Index n = design.rows(), q = design.cols();
  if (response.size() != n) throw ParameterError("fit_glm: response length != design rows");
  if (n < q) throw ParameterError("fit_glm: need n >= q (" + std::to_string(n) + " < " +
                                  std::to_string(q) + ")");
  if (q == 0) throw ParameterError("fit_glm: empty design");
  check_response(response, family);
  Vec w = weights.value_or(Vec::Ones(n));
  if (w.size() != n) throw ParameterError("fit_glm: weights length != design rows");
  if ((w.array() < 0.0).any()) throw ParameterError("fit_glm: negative weights");

  GlmFit fit;
  fit.family = family;
  fit.weight_floor = opts.weight_floor;

  Vec beta = initial_coefficients(design, response, w, family);
  Vec eta = design * beta;
  Vec mu = mean_from_eta(eta, family);
  double dev = deviance(response, mu, w, family);
  fit.deviance_path.push_back(dev);

  const double score_target = opts.tol * static_cast<double>(n);
  if (max_abs_score(design, response, mu, w) <= score_target) {
    fit.coefficients = beta;
    fit.converged = true;
    fit.iterations = 0;
    fit.final_deviance = dev;
    return fit;
  }

  Mat xtwx(q, q);
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    // Working weights; canonical links make dmu/deta equal the variance function.
    Vec ww(n);
    Vec z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double v;
      switch (family) {
        case GlmFamily::kLogistic: v = mu[i] * (1.0 - mu[i]); break;
        case GlmFamily::kPoissonLog: v = mu[i]; break;
        default: v = 1.0; break;
      }
      v = std::max(v, opts.weight_floor);
      ww[i] = v * w[i];
      z[i] = eta[i] + (response[i] - mu[i]) / v;
    }
    xtwx.noalias() = design.transpose() * ww.asDiagonal() * design;
    const Vec xtwz = design.transpose() * ww.cwiseProduct(z);

    Eigen::LDLT<Mat> ldlt(xtwx);
    Vec beta_new = ldlt.solve(xtwz);
    const double dmax = ldlt.vectorD().cwiseAbs().maxCoeff();
    const double dmin = ldlt.vectorD().cwiseAbs().minCoeff();
    if (!beta_new.allFinite() || ldlt.info() != Eigen::Success || dmin <= 1e-12 * dmax) {
      const double scale = std::max(dmax, 1.0);
      Mat jittered = xtwx + opts.ridge * scale * Mat::Identity(q, q);
      beta_new = Eigen::LDLT<Mat>(jittered).solve(xtwz);
      fit.rank_deficient = true;
      if (!beta_new.allFinite()) {
        fit.coefficients = beta;
        fit.iterations = iter;
        fit.final_deviance = dev;
        return fit;  // converged=false, last finite iterate kept
      }
    }

    // Step-halving keeps the deviance non-increasing.
    Vec eta_new = design * beta_new;
    Vec mu_new = mean_from_eta(eta_new, family);
    double dev_new = deviance(response, mu_new, w, family);
    int halvings = 0;
    while ((!std::isfinite(dev_new) || dev_new > dev + 1e-10 * (1.0 + std::abs(dev))) &&
           halvings < 30) {
      beta_new = 0.5 * (beta_new + beta);
      eta_new = design * beta_new;
      mu_new = mean_from_eta(eta_new, family);
      dev_new = deviance(response, mu_new, w, family);
      ++halvings;
    }
    if (!std::isfinite(dev_new)) {
      fit.coefficients = beta;
      fit.iterations = iter;
      fit.final_deviance = dev;
      return fit;
    }

    beta = std::move(beta_new);
    eta = std::move(eta_new);
    mu = std::move(mu_new);
    dev = dev_new;
    fit.iterations = iter;
    fit.deviance_path.push_back(dev);

    if (family == GlmFamily::kLogistic && eta.cwiseAbs().minCoeff() > opts.separation_cutoff) {
      fit.separated = true;
      break;
    }
    if (max_abs_score(design, response, mu, w) <= score_target) {
      // A vanishing score with every probability saturated at its label is
      // separation, not a maximum.
      if (family == GlmFamily::kLogistic &&
          (response - mu).cwiseAbs().maxCoeff() < 1e-6) {
        fit.separated = true;
        break;
      }
      fit.converged = true;
      break;
    }
  }

  fit.coefficients = beta;
  fit.final_deviance = dev;
  return fit;
}

// Mean-scale predictions, optionally clamped into [clip.first, clip.second].
inline Vec predict_glm(const GlmFit& fit, const Mat& design,
                       std::optional<std::pair<double, double>> clip = std::nullopt,
                       bool allow_unconverged = false) {
  if (!fit.converged && !allow_unconverged) {
    throw ComputationError(std::string("predict_glm: ") + family_name(fit.family) +
                           " fit did not converge" + (fit.separated ? " (separation)" : ""));
  }
  if (design.cols() != fit.coefficients.size()) {
    throw ParameterError("predict_glm: design has " + std::to_string(design.cols()) +
                         " columns, fit has " + std::to_string(fit.coefficients.size()));
  }
  Vec eta = design * fit.coefficients;
  Vec mu = glm_detail::mean_from_eta(eta, fit.family);
  if (clip) {
    if (clip->first > clip->second) throw ParameterError("predict_glm: clip lo > hi");
    mu = mu.cwiseMax(clip->first).cwiseMin(clip->second);
  }
  return mu;
}

}  // namespace drmo

#endif  // DRMO_GLM_HPP
