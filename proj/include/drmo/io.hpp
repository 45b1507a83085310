#ifndef DRMO_IO_HPP
#define DRMO_IO_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "drmo/common.hpp"
#include "drmo/estimands.hpp"
#include "drmo/simulate.hpp"
#include "drmo/testing.hpp"

namespace drmo {

static_assert(std::endian::native == std::endian::little,
              "influence files are defined little-endian");

using Json = nlohmann::json;

namespace io_detail {

inline Json vec_to_json(const Vec& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v[i])) {
      arr.push_back(v[i]);
    } else {
      arr.push_back(nullptr);
    }
  }
  return arr;
}

inline Vec vec_from_json(const Json& arr) {
  Vec v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] =
        arr[i].is_null() ? std::numeric_limits<double>::quiet_NaN() : arr[i].get<double>();
  }
  return v;
}

inline std::string tsv_double(double v) {
  if (std::isnan(v)) return "nan";
  return detail::format_double(v);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("failed while writing '" + path + "'");
}

inline Json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw IoError("cannot parse JSON from '" + path + "': " + e.what());
  }
  return j;
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// EstimandResult

inline void write_result_tsv(const EstimandResult& result, const std::string& path) {
  std::string text = "name\ttau\tsigma\tt\tflags\n";
  for (int j = 0; j < result.tau.size(); ++j) {
    text += result.outcome_names[static_cast<std::size_t>(j)];
    text += '\t';
    text += io_detail::tsv_double(result.tau[j]);
    text += '\t';
    text += io_detail::tsv_double(result.sigma[j]);
    text += '\t';
    text += io_detail::tsv_double(result.t[j]);
    text += '\t';
    text += result.flags[static_cast<std::size_t>(j)].to_string();
    text += '\n';
  }
  io_detail::write_text(path, text);
}

inline Json result_to_json(const EstimandResult& result) {
  Json j;
  j["estimand"] = estimand_name(result.estimand);
  j["n"] = result.n;
  j["outcome_names"] = result.outcome_names;
  j["tau"] = io_detail::vec_to_json(result.tau);
  j["sigma"] = io_detail::vec_to_json(result.sigma);
  j["t"] = io_detail::vec_to_json(result.t);
  j["null_values"] = io_detail::vec_to_json(result.null_values);
  std::vector<std::string> flags;
  flags.reserve(result.flags.size());
  for (const auto& f : result.flags) flags.push_back(f.to_string());
  j["flags"] = flags;
  if (result.ste) {
    j["components"] = {{"beta0", io_detail::vec_to_json(result.ste->beta0)},
                       {"beta1", io_detail::vec_to_json(result.ste->beta1)},
                       {"beta2", io_detail::vec_to_json(result.ste->beta2)}};
  }
  if (result.qte) {
    j["components"] = {{"theta0", io_detail::vec_to_json(result.qte->theta0)},
                       {"theta1", io_detail::vec_to_json(result.qte->theta1)},
                       {"f0", io_detail::vec_to_json(result.qte->f0)},
                       {"f1", io_detail::vec_to_json(result.qte->f1)},
                       {"theta0_init", io_detail::vec_to_json(result.qte->theta0_init)},
                       {"theta1_init", io_detail::vec_to_json(result.qte->theta1_init)}};
  }
  if (result.sqte) {
    j["components"] = {{"theta0", io_detail::vec_to_json(result.sqte->qte.theta0)},
                       {"theta1", io_detail::vec_to_json(result.sqte->qte.theta1)},
                       {"f0", io_detail::vec_to_json(result.sqte->qte.f0)},
                       {"f1", io_detail::vec_to_json(result.sqte->qte.f1)},
                       {"theta0_init", io_detail::vec_to_json(result.sqte->qte.theta0_init)},
                       {"theta1_init", io_detail::vec_to_json(result.sqte->qte.theta1_init)},
                       {"q25", io_detail::vec_to_json(result.sqte->q25)},
                       {"q75", io_detail::vec_to_json(result.sqte->q75)},
                       {"iqr", io_detail::vec_to_json(result.sqte->iqr)}};
  }
  return j;
}

inline void write_result_json(const EstimandResult& result, const std::string& path) {
  io_detail::write_text(path, result_to_json(result).dump(2) + "\n");
}

inline EstimandResult read_result_json(const std::string& path) {
  const Json j = io_detail::load_json(path);
  EstimandResult result;
  result.estimand = estimand_from_name(j.at("estimand").get<std::string>());
  result.n = j.at("n").get<int>();
  result.outcome_names = j.at("outcome_names").get<std::vector<std::string>>();
  result.tau = io_detail::vec_from_json(j.at("tau"));
  result.sigma = io_detail::vec_from_json(j.at("sigma"));
  result.t = io_detail::vec_from_json(j.at("t"));
  result.null_values = io_detail::vec_from_json(j.at("null_values"));
  for (const auto& s : j.at("flags").get<std::vector<std::string>>()) {
    result.flags.push_back(flags_from_string(s));
  }
  return result;
}

// ---------------------------------------------------------------------------
// InfluenceMatrix: little-endian column-major doubles plus a JSON sidecar.

inline void write_influence(const InfluenceMatrix& influence, const std::string& bin_path,
                            const std::string& sidecar_path, std::uint64_t seed) {
  std::ofstream out(bin_path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + bin_path + "'");
  out.write(reinterpret_cast<const char*>(influence.values.data()),
            static_cast<std::streamsize>(sizeof(double)) * influence.values.size());
  if (!out) throw IoError("failed while writing '" + bin_path + "'");
  out.close();

  Json sidecar;
  sidecar["n"] = influence.n();
  sidecar["p"] = influence.p();
  sidecar["estimand"] = estimand_name(influence.estimand);
  sidecar["centering"] = "centered";
  sidecar["layout"] = "column-major";
  sidecar["byte_order"] = "little";
  sidecar["seed"] = seed;
  io_detail::write_text(sidecar_path, sidecar.dump(2) + "\n");
}

inline InfluenceMatrix read_influence(const std::string& bin_path, const std::string& sidecar_path,
                                      const EstimandResult& result) {
  const Json sidecar = io_detail::load_json(sidecar_path);
  const int n = sidecar.at("n").get<int>();
  const int p = sidecar.at("p").get<int>();
  if (sidecar.at("layout").get<std::string>() != "column-major" ||
      sidecar.at("byte_order").get<std::string>() != "little") {
    throw IoError("unsupported influence layout in '" + sidecar_path + "'");
  }
  InfluenceMatrix influence;
  influence.estimand = estimand_from_name(sidecar.at("estimand").get<std::string>());
  influence.values.resize(n, p);
  std::ifstream in(bin_path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + bin_path + "'");
  in.read(reinterpret_cast<char*>(influence.values.data()),
          static_cast<std::streamsize>(sizeof(double)) * influence.values.size());
  if (in.gcount() != static_cast<std::streamsize>(sizeof(double)) * influence.values.size()) {
    throw IoError("'" + bin_path + "' is shorter than the sidecar dimensions imply");
  }
  if (result.tau.size() != p || result.n != n) {
    throw IoError("result file does not match influence dimensions");
  }
  influence.sigma = result.sigma;
  influence.column_flags = result.flags;
  return influence;
}

// ---------------------------------------------------------------------------
// DiscoverySet

inline Json discovery_to_json(const DiscoverySet& set, const std::vector<std::string>& names) {
  Json j;
  j["candidate_set"] = set.candidate_set;
  j["discoveries"] = set.discoveries;
  std::vector<std::string> discovered;
  for (int idx : set.discoveries) discovered.push_back(names[static_cast<std::size_t>(idx)]);
  j["discovery_names"] = discovered;
  j["augmented_count"] = set.augmented_count;
  Json trace = Json::array();
  for (const auto& step : set.trace) {
    Json row;
    if (step.removed_index >= 0) {
      row["removed_index"] = step.removed_index;
    } else {
      row["removed_index"] = nullptr;
    }
    row["max_stat"] = step.max_stat;
    row["quantile"] = step.quantile;
    trace.push_back(row);
  }
  j["stepdown_trace"] = trace;
  j["params"] = {{"c", set.params.c},
                 {"alpha", set.params.alpha},
                 {"bootstrap_b", set.params.bootstrap_b},
                 {"screen_cn", set.params.screen_cn},
                 {"seed", set.params.seed}};
  return j;
}

inline void write_discovery_json(const DiscoverySet& set, const std::vector<std::string>& names,
                                 const std::string& path) {
  io_detail::write_text(path, discovery_to_json(set, names).dump(2) + "\n");
}

// Per-outcome decisions: discovery / null / excluded.
inline void write_decisions_tsv(const EstimandResult& result, const std::vector<int>& candidates,
                                const std::vector<int>& discoveries, const std::string& path) {
  std::vector<bool> is_candidate(static_cast<std::size_t>(result.tau.size()), false);
  for (int j : candidates) is_candidate[static_cast<std::size_t>(j)] = true;
  std::vector<bool> is_discovery(static_cast<std::size_t>(result.tau.size()), false);
  for (int j : discoveries) is_discovery[static_cast<std::size_t>(j)] = true;
  std::string text = "name\tt\tsigma\tdecision\tflags\n";
  for (int j = 0; j < result.tau.size(); ++j) {
    const auto idx = static_cast<std::size_t>(j);
    text += result.outcome_names[idx];
    text += '\t';
    text += io_detail::tsv_double(result.t[j]);
    text += '\t';
    text += io_detail::tsv_double(result.sigma[j]);
    text += '\t';
    text += is_discovery[idx] ? "discovery" : (is_candidate[idx] ? "null" : "excluded");
    text += '\t';
    text += result.flags[idx].to_string();
    text += '\n';
  }
  io_detail::write_text(path, text);
}

// ---------------------------------------------------------------------------
// SimReport

inline void write_replicates_tsv(const std::vector<std::pair<int, SimReport>>& reports,
                                 const std::string& path) {
  std::string text = "n\treplicate\testimand\tmethod\tfdp\texceed\tpower\tdiscoveries\ttruth_size\n";
  for (const auto& [n, report] : reports) {
    for (const auto& rec : report.records) {
      text += std::to_string(n);
      text += '\t';
      text += std::to_string(rec.replicate);
      text += '\t';
      text += estimand_name(rec.estimand);
      text += '\t';
      text += method_name(rec.method);
      text += '\t';
      text += io_detail::tsv_double(rec.fdp);
      text += '\t';
      text += rec.exceed ? "1" : "0";
      text += '\t';
      text += io_detail::tsv_double(rec.power);
      text += '\t';
      text += std::to_string(rec.discoveries);
      text += '\t';
      text += std::to_string(rec.truth_size);
      text += '\n';
    }
  }
  io_detail::write_text(path, text);
}

inline Json aggregate_to_json(const SimReport& report) {
  Json arr = Json::array();
  for (const auto& agg : report.aggregates) {
    arr.push_back({{"estimand", estimand_name(agg.estimand)},
                   {"method", method_name(agg.method)},
                   {"fdx", agg.fdx},
                   {"fdr", agg.fdr},
                   {"mean_power", agg.mean_power},
                   {"replicates_ok", agg.replicates_ok}});
  }
  Json j;
  j["aggregates"] = arr;
  j["replicates"] = report.replicates;
  j["failures"] = report.failures;
  j["failure_messages"] = report.failure_messages;
  j["resample_warnings"] = report.resample_warnings;
  j["null_truth"] = report.null_truth;
  return j;
}

// Plot-ready rows: one (estimand, method, n, metric) per line.
inline void write_plot_data_tsv(const std::vector<std::pair<int, SimReport>>& reports,
                                const std::string& path) {
  std::string text = "estimand\tmethod\tn\tmetric\tvalue\n";
  for (const auto& [n, report] : reports) {
    for (const auto& agg : report.aggregates) {
      for (const auto& [metric, value] :
           std::initializer_list<std::pair<const char*, double>>{
               {"fdx", agg.fdx}, {"fdr", agg.fdr}, {"power", agg.mean_power}}) {
        text += estimand_name(agg.estimand);
        text += '\t';
        text += method_name(agg.method);
        text += '\t';
        text += std::to_string(n);
        text += '\t';
        text += metric;
        text += '\t';
        text += io_detail::tsv_double(value);
        text += '\n';
      }
    }
  }
  io_detail::write_text(path, text);
}

}  // namespace drmo

#endif  // DRMO_IO_HPP
