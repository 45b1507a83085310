#ifndef DRMO_DATA_MODEL_HPP
#define DRMO_DATA_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "drmo/common.hpp"

namespace drmo {

// Immutable after construction; safe to share read-only across threads.
struct ObservationTable {
  IntVec treatment;                        // n, values in {0,1}, both present
  Mat covariates;                          // n x q, first column is the intercept
  Mat outcomes;                            // n x p, derived outcomes
  std::vector<std::string> outcome_names;  // p labels

  int n() const { return static_cast<int>(outcomes.rows()); }
  int q() const { return static_cast<int>(covariates.cols()); }
  int p() const { return static_cast<int>(outcomes.cols()); }

  std::vector<int> arm_rows(int arm) const {
    std::vector<int> rows;
    for (int i = 0; i < n(); ++i) {
      if (treatment[i] == arm) rows.push_back(i);
    }
    return rows;
  }
};

namespace detail {

inline bool is_constant_one(const Vec& col) {
  return (col.array() == 1.0).all();
}

}  // namespace detail

// Validates invariants and prepends an all-ones intercept column unless the
// first covariate column is already constant 1.
inline ObservationTable make_observation_table(IntVec treatment, Mat covariates, Mat outcomes,
                                               std::vector<std::string> outcome_names) {
  const auto n = treatment.size();
  if (covariates.rows() != n || outcomes.rows() != n) {
    throw ValidationError("inconsistent dimensions: treatment has " + std::to_string(n) +
                          " rows, covariates " + std::to_string(covariates.rows()) +
                          ", outcomes " + std::to_string(outcomes.rows()));
  }
  if (n == 0) throw ValidationError("empty table");
  if (outcomes.cols() == 0) throw ValidationError("table has no outcome columns");
  bool seen0 = false, seen1 = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (treatment[i] == 0) {
      seen0 = true;
    } else if (treatment[i] == 1) {
      seen1 = true;
    } else {
      throw ValidationError("treatment must be 0 or 1; row " + std::to_string(i + 1) + " has " +
                            std::to_string(treatment[i]));
    }
  }
  if (!seen0 || !seen1) throw ValidationError("both treatment arms must be non-empty");
  if (!covariates.allFinite()) throw ValidationError("covariates contain NaN/Inf");
  if (!outcomes.allFinite()) throw ValidationError("outcomes contain NaN/Inf");

  if (covariates.cols() == 0 || !detail::is_constant_one(covariates.col(0))) {
    Mat with_intercept(n, covariates.cols() + 1);
    with_intercept.col(0) = Vec::Ones(n);
    if (covariates.cols() > 0) with_intercept.rightCols(covariates.cols()) = covariates;
    covariates = std::move(with_intercept);
  }

  if (outcome_names.empty()) {
    for (Eigen::Index j = 0; j < outcomes.cols(); ++j) {
      outcome_names.push_back("y" + std::to_string(j + 1));
    }
  }
  if (static_cast<Eigen::Index>(outcome_names.size()) != outcomes.cols()) {
    throw ValidationError("outcome_names size does not match outcome columns");
  }

  ObservationTable table;
  table.treatment = std::move(treatment);
  table.covariates = std::move(covariates);
  table.outcomes = std::move(outcomes);
  table.outcome_names = std::move(outcome_names);
  return table;
}

// ---------------------------------------------------------------------------
// Repeated per-subject measurements and their aggregation into derived outcomes.

enum class CellAggregation { kMean, kSum, kMedianOfMeans };

struct CellMatrixSet {
  std::vector<Mat> cells;  // one m_i x d matrix per subject, m_i >= 1

  int d() const { return cells.empty() ? 0 : static_cast<int>(cells.front().cols()); }
};

namespace detail {

// Contiguous blocks with sizes differing by at most one.
inline std::vector<std::pair<int, int>> split_blocks(int m, int blocks) {
  std::vector<std::pair<int, int>> out;
  const int base = m / blocks, extra = m % blocks;
  int start = 0;
  for (int b = 0; b < blocks; ++b) {
    const int len = base + (b < extra ? 1 : 0);
    out.emplace_back(start, len);
    start += len;
  }
  return out;
}

inline double median_inplace(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size();
  return (m % 2 == 1) ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

}  // namespace detail

inline Mat aggregate_cells(const CellMatrixSet& set, CellAggregation mode, int block_count = 0) {
  if (set.cells.empty()) throw ParameterError("aggregate_cells: empty cell set");
  const int d = set.d();
  for (std::size_t i = 0; i < set.cells.size(); ++i) {
    if (set.cells[i].cols() != d) {
      throw ValidationError("aggregate_cells: subject " + std::to_string(i + 1) +
                            " has a different column count");
    }
    if (set.cells[i].rows() < 1) {
      throw ValidationError("aggregate_cells: subject " + std::to_string(i + 1) + " has no cells");
    }
  }
  Mat out(static_cast<Eigen::Index>(set.cells.size()), d);
  for (std::size_t i = 0; i < set.cells.size(); ++i) {
    const Mat& x = set.cells[i];
    switch (mode) {
      case CellAggregation::kMean:
        out.row(static_cast<Eigen::Index>(i)) = x.colwise().mean();
        break;
      case CellAggregation::kSum:
        out.row(static_cast<Eigen::Index>(i)) = x.colwise().sum();
        break;
      case CellAggregation::kMedianOfMeans: {
        if (block_count < 1 || block_count > x.rows()) {
          throw ParameterError("aggregate_cells: median_of_means block_count " +
                               std::to_string(block_count) + " invalid for subject with " +
                               std::to_string(x.rows()) + " cells");
        }
        const auto blocks = detail::split_blocks(static_cast<int>(x.rows()), block_count);
        for (int c = 0; c < d; ++c) {
          std::vector<double> means;
          means.reserve(blocks.size());
          for (const auto& [start, len] : blocks) {
            means.push_back(x.col(c).segment(start, len).mean());
          }
          out(static_cast<Eigen::Index>(i), c) = detail::median_inplace(means);
        }
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Screening on subject-level nonzero counts.

struct ScreenResult {
  ObservationTable table;
  std::vector<int> kept;  // original outcome indices, ascending
};

inline ScreenResult screen_outcomes(const ObservationTable& table, int min_nonzero) {
  if (min_nonzero < 0) throw ParameterError("screen_outcomes: min_nonzero must be >= 0");
  std::vector<int> kept;
  for (int j = 0; j < table.p(); ++j) {
    const int nonzero = static_cast<int>((table.outcomes.col(j).array() != 0.0).count());
    if (nonzero >= min_nonzero) kept.push_back(j);
  }
  if (kept.empty()) {
    throw ValidationError("screen_outcomes: every outcome fell below min_nonzero=" +
                          std::to_string(min_nonzero));
  }
  Mat outcomes(table.n(), static_cast<Eigen::Index>(kept.size()));
  std::vector<std::string> names;
  names.reserve(kept.size());
  for (std::size_t k = 0; k < kept.size(); ++k) {
    outcomes.col(static_cast<Eigen::Index>(k)) = table.outcomes.col(kept[k]);
    names.push_back(table.outcome_names[static_cast<std::size_t>(kept[k])]);
  }
  ScreenResult result;
  result.table = make_observation_table(table.treatment, table.covariates, std::move(outcomes),
                                        std::move(names));
  result.kept = std::move(kept);
  return result;
}

// ---------------------------------------------------------------------------
// Delimited-text ingestion. Header row required, '.' decimal point, no quoting.

struct TableSchema {
  std::string treatment_col;
  std::vector<std::string> covariate_cols;  // names or globs with '*'/'?'
  std::vector<std::string> outcome_cols;
};

namespace detail {

inline bool glob_match(const std::string& pattern, const std::string& text) {
  std::size_t p = 0, t = 0, star = std::string::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
      ++p;
      ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (star != std::string::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

inline bool is_glob(const std::string& s) {
  return s.find('*') != std::string::npos || s.find('?') != std::string::npos;
}

inline char infer_delimiter(const std::string& path) {
  const auto dot = path.find_last_of('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == "csv") return ',';
  return '\t';
}

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r') {
    fields.back().pop_back();
  }
  return fields;
}

inline double parse_cell(const std::string& field, int row, const std::string& column) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const double value = std::strtod(begin, &end);
  if (end == begin || (end && *end != '\0')) {
    throw ValidationError("row " + std::to_string(row) + ", column '" + column +
                          "': cannot parse '" + field + "' as a number");
  }
  if (!std::isfinite(value)) {
    throw ValidationError("row " + std::to_string(row) + ", column '" + column +
                          "': non-finite value '" + field + "'");
  }
  return value;
}

// Resolves schema entries against the header; globs expand in header order.
inline std::vector<int> resolve_columns(const std::vector<std::string>& wanted,
                                        const std::vector<std::string>& header,
                                        const char* role) {
  std::vector<int> cols;
  for (const auto& entry : wanted) {
    if (is_glob(entry)) {
      bool matched = false;
      for (std::size_t h = 0; h < header.size(); ++h) {
        if (glob_match(entry, header[h])) {
          cols.push_back(static_cast<int>(h));
          matched = true;
        }
      }
      if (!matched) {
        throw SchemaError(std::string(role) + " pattern '" + entry + "' matches no column");
      }
    } else {
      const auto it = std::find(header.begin(), header.end(), entry);
      if (it == header.end()) {
        throw SchemaError(std::string(role) + " column '" + entry + "' not found in header");
      }
      cols.push_back(static_cast<int>(it - header.begin()));
    }
  }
  return cols;
}

}  // namespace detail

// delimiter '\0' means: infer from the file extension (.csv -> ',', else tab).
inline ObservationTable load_observations(const std::string& path, const TableSchema& schema,
                                          char delimiter = '\0') {
  if (schema.treatment_col.empty()) throw SchemaError("schema needs a treatment column");
  if (schema.covariate_cols.empty()) throw SchemaError("schema needs at least one covariate column");
  if (schema.outcome_cols.empty()) throw SchemaError("schema needs at least one outcome column");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  const char delim = delimiter == '\0' ? detail::infer_delimiter(path) : delimiter;

  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path + "' is empty (header row required)");
  const auto header = detail::split_line(line, delim);

  const auto a_cols = detail::resolve_columns({schema.treatment_col}, header, "treatment");
  auto w_cols = detail::resolve_columns(schema.covariate_cols, header, "covariate");
  auto y_cols = detail::resolve_columns(schema.outcome_cols, header, "outcome");
  const int a_col = a_cols.front();
  for (int c : w_cols) {
    if (c == a_col) throw SchemaError("column '" + header[c] + "' used as both treatment and covariate");
  }
  for (int c : y_cols) {
    if (c == a_col) throw SchemaError("column '" + header[c] + "' used as both treatment and outcome");
    if (std::find(w_cols.begin(), w_cols.end(), c) != w_cols.end()) {
      throw SchemaError("column '" + header[c] + "' used as both covariate and outcome");
    }
  }

  std::vector<double> a_vals;
  std::vector<std::vector<double>> w_vals(w_cols.size()), y_vals(y_cols.size());
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    const auto fields = detail::split_line(line, delim);
    if (fields.size() != header.size()) {
      throw ValidationError("row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                            " fields, header has " + std::to_string(header.size()));
    }
    const double a = detail::parse_cell(fields[a_col], row, header[a_col]);
    if (a != 0.0 && a != 1.0) {
      throw ValidationError("row " + std::to_string(row) + ": treatment value '" + fields[a_col] +
                            "' is not 0 or 1");
    }
    a_vals.push_back(a);
    for (std::size_t k = 0; k < w_cols.size(); ++k) {
      w_vals[k].push_back(detail::parse_cell(fields[w_cols[k]], row, header[w_cols[k]]));
    }
    for (std::size_t k = 0; k < y_cols.size(); ++k) {
      y_vals[k].push_back(detail::parse_cell(fields[y_cols[k]], row, header[y_cols[k]]));
    }
  }
  if (row == 0) throw ValidationError("'" + path + "' has a header but no data rows");

  const int n = row;
  IntVec treatment(n);
  for (int i = 0; i < n; ++i) treatment[i] = static_cast<int>(a_vals[i]);
  Mat covariates(n, static_cast<Eigen::Index>(w_cols.size()));
  for (std::size_t k = 0; k < w_cols.size(); ++k) {
    covariates.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Vec>(w_vals[k].data(), n);
  }
  Mat outcomes(n, static_cast<Eigen::Index>(y_cols.size()));
  std::vector<std::string> names;
  for (std::size_t k = 0; k < y_cols.size(); ++k) {
    outcomes.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Vec>(y_vals[k].data(), n);
    names.push_back(header[y_cols[k]]);
  }
  return make_observation_table(std::move(treatment), std::move(covariates), std::move(outcomes),
                                std::move(names));
}

namespace detail {

// %.17g text round-trips IEEE doubles exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Header: A, x1..xq (x1 is the intercept), then outcome names. Loading with
// written_table_schema reproduces the matrices bit-exactly.
inline void write_observations(const ObservationTable& table, const std::string& path,
                               char delimiter = '\0') {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (std::size_t j = 0; j < table.outcome_names.size(); ++j) {
    const auto& name = table.outcome_names[j];
    if (name == "A" || (name.size() >= 2 && name[0] == 'x' &&
                        name.find_first_not_of("0123456789", 1) == std::string::npos)) {
      throw IoError("outcome name '" + name + "' collides with a reserved header column");
    }
  }
  const char delim = delimiter == '\0' ? detail::infer_delimiter(path) : delimiter;
  out << "A";
  for (int c = 0; c < table.q(); ++c) out << delim << "x" << (c + 1);
  for (const auto& name : table.outcome_names) out << delim << name;
  out << '\n';
  for (int i = 0; i < table.n(); ++i) {
    out << table.treatment[i];
    for (int c = 0; c < table.q(); ++c) out << delim << detail::format_double(table.covariates(i, c));
    for (int j = 0; j < table.p(); ++j) out << delim << detail::format_double(table.outcomes(i, j));
    out << '\n';
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

inline TableSchema written_table_schema(const ObservationTable& table) {
  TableSchema schema;
  schema.treatment_col = "A";
  for (int c = 0; c < table.q(); ++c) schema.covariate_cols.push_back("x" + std::to_string(c + 1));
  schema.outcome_cols = table.outcome_names;
  return schema;
}

}  // namespace drmo

#endif  // DRMO_DATA_MODEL_HPP
