#ifndef DRMO_COMMON_HPP
#define DRMO_COMMON_HPP

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace drmo {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using IntVec = Eigen::VectorXi;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad values inside otherwise well-formed inputs (non-binary treatment, NaN cells, ...).
struct ValidationError : Error {
  using Error::Error;
};

// Missing/duplicate columns, unknown config keys.
struct SchemaError : Error {
  using Error::Error;
};

// Out-of-domain arguments.
struct ParameterError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Cross-fitting partition cannot satisfy the both-arms requirement.
struct FoldError : Error {
  using Error::Error;
};

// Numeric failure that makes a whole call unusable.
struct ComputationError : Error {
  using Error::Error;
};

enum class EstimandKind { kAte, kSte, kQte, kSqte };

inline const char* estimand_name(EstimandKind kind) {
  switch (kind) {
    case EstimandKind::kAte: return "ate";
    case EstimandKind::kSte: return "ste";
    case EstimandKind::kQte: return "qte";
    case EstimandKind::kSqte: return "sqte";
  }
  return "?";
}

inline EstimandKind estimand_from_name(const std::string& name) {
  if (name == "ate") return EstimandKind::kAte;
  if (name == "ste") return EstimandKind::kSte;
  if (name == "qte") return EstimandKind::kQte;
  if (name == "sqte") return EstimandKind::kSqte;
  throw ParameterError("unknown estimand '" + name + "' (expected ate|ste|qte|sqte)");
}

// Per-outcome diagnostics carried from nuisance fitting through testing.
struct ColumnFlags {
  bool degenerate = false;        // excluded from tests, tau withheld
  bool fit_failed = false;        // a required nuisance fit did not converge
  bool clamped_nuisance = false;  // an outcome-mean prediction hit the observed range
  bool floored_density = false;   // a density estimate was raised to the floor

  bool any() const { return degenerate || fit_failed || clamped_nuisance || floored_density; }

  std::string to_string() const {
    std::string s;
    auto add = [&s](const char* tag) {
      if (!s.empty()) s += '|';
      s += tag;
    };
    if (degenerate) add("degenerate");
    if (fit_failed) add("fit_failed");
    if (clamped_nuisance) add("clamped_nuisance");
    if (floored_density) add("floored_density");
    if (s.empty()) s = "-";
    return s;
  }

  void merge(const ColumnFlags& other) {
    degenerate = degenerate || other.degenerate;
    fit_failed = fit_failed || other.fit_failed;
    clamped_nuisance = clamped_nuisance || other.clamped_nuisance;
    floored_density = floored_density || other.floored_density;
  }
};

inline ColumnFlags flags_from_string(const std::string& s) {
  ColumnFlags f;
  if (s == "-" || s.empty()) return f;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t bar = s.find('|', start);
    std::string tok = s.substr(start, bar == std::string::npos ? std::string::npos : bar - start);
    if (tok == "degenerate") f.degenerate = true;
    else if (tok == "fit_failed") f.fit_failed = true;
    else if (tok == "clamped_nuisance") f.clamped_nuisance = true;
    else if (tok == "floored_density") f.floored_density = true;
    else throw ValidationError("unknown outcome flag '" + tok + "'");
    if (bar == std::string::npos) break;
    start = bar + 1;
  }
  return f;
}

}  // namespace drmo

#endif  // DRMO_COMMON_HPP
