#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "drmo/cli.hpp"

using namespace drmo;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
};

CliRun run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"drmo"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream captured;
  auto* old = std::cout.rdbuf(captured.rdbuf());
  CliRun result;
  result.code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old);
  result.out = captured.str();
  return result;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("version command") {
  const auto r = run({"version"});
  REQUIRE(r.code == 0);
  REQUIRE(r.out.find("drmo") != std::string::npos);
  REQUIRE(r.out.find(kProjectVersion) != std::string::npos);
}

TEST_CASE("estimate ATE on a toy CSV produces a 3-row result table") {
  const auto dir = fresh_dir("drmo_cli_est");
  const auto csv = dir / "toy.csv";
  std::ostringstream data;
  data << "A,w1,y1,y2,y3\n";
  for (int i = 0; i < 10; ++i) {
    data << (i % 2) << "," << 0.1 * i << "," << i << "," << (10 - i) << "," << (i * i % 7) << "\n";
  }
  write_file(csv, data.str());
  const auto r = run({"estimate", "--input", csv.string(), "--outcome-cols", "y*",
                      "--covariate-cols", "w1", "--estimand", "ate", "--outcome-family",
                      "gaussian_identity", "--out", (dir / "res").string()});
  REQUIRE(r.code == 0);
  const auto tsv = slurp(dir / "res" / "result.tsv");
  int lines = 0;
  for (char ch : tsv) lines += ch == '\n' ? 1 : 0;
  REQUIRE(lines == 4);  // header + 3 outcomes
  REQUIRE(tsv.rfind("name\ttau\tsigma\tt\tflags", 0) == 0);
}

TEST_CASE("estimate is byte-deterministic across runs") {
  const auto dir = fresh_dir("drmo_cli_det");
  const auto r0 = run({"simulate", "--p", "6", "--n", "60", "--m", "3", "--d", "2", "--active",
                       "2", "--seed", "5", "--out", (dir / "data").string()});
  REQUIRE(r0.code == 0);
  const std::string table = (dir / "data" / "observations.tsv").string();
  for (const char* sub : {"a", "b"}) {
    const auto r = run({"estimate", "--input", table, "--estimand", "ste", "--crossfit-k", "5",
                        "--seed", "7", "--out", (dir / sub).string()});
    REQUIRE(r.code == 0);
  }
  REQUIRE(slurp(dir / "a" / "result.json") == slurp(dir / "b" / "result.json"));
  REQUIRE(slurp(dir / "a" / "influence.bin") == slurp(dir / "b" / "influence.bin"));
  REQUIRE(slurp(dir / "a" / "result.tsv") == slurp(dir / "b" / "result.tsv"));
}

TEST_CASE("qte on all-zero-median outcomes flags everything, exit 0") {
  const auto dir = fresh_dir("drmo_cli_zero");
  const auto csv = dir / "sparse.csv";
  std::ostringstream data;
  data << "A,w1,g1,g2\n";
  // ~70% zeros in both outcomes, both arms
  for (int i = 0; i < 40; ++i) {
    const int y1 = (i % 10 < 3) ? 1 + i % 3 : 0;
    const int y2 = (i % 10 < 2) ? 2 : 0;
    data << (i % 2) << "," << 0.05 * i << "," << y1 << "," << y2 << "\n";
  }
  write_file(csv, data.str());
  const auto r = run({"estimate", "--input", csv.string(), "--covariate-cols", "w1", "--estimand",
                      "qte", "--rho", "0.5", "--out", (dir / "res").string()});
  REQUIRE(r.code == 0);
  const auto tsv = slurp(dir / "res" / "result.tsv");
  REQUIRE(tsv.find("g1\tnan") != std::string::npos);
  REQUIRE(tsv.find("degenerate") != std::string::npos);
  // every outcome flagged
  std::istringstream lines(tsv);
  std::string line;
  std::getline(lines, line);  // header
  while (std::getline(lines, line)) {
    REQUIRE(line.find("degenerate") != std::string::npos);
  }
}

TEST_CASE("test command on stored artifacts, bh dispatch, and missing files") {
  const auto dir = fresh_dir("drmo_cli_test");
  REQUIRE(run({"simulate", "--p", "8", "--n", "80", "--m", "4", "--d", "2", "--active", "3",
               "--seed", "9", "--out", (dir / "data").string()})
              .code == 0);
  REQUIRE(run({"estimate", "--input", (dir / "data" / "observations.tsv").string(), "--estimand",
               "ate", "--out", (dir / "res").string()})
              .code == 0);

  SECTION("stepdown writes discoveries and decisions") {
    const auto r = run({"test", "--results", (dir / "res" / "result.json").string(), "--influence",
                        (dir / "res" / "influence.bin").string(), "--method", "stepdown",
                        "--bootstrap", "300", "--seed", "4", "--out", (dir / "t1").string()});
    REQUIRE(r.code == 0);
    const auto json = Json::parse(slurp(dir / "t1" / "discoveries.json"));
    REQUIRE(json.at("method") == "stepdown");
    REQUIRE(json.contains("stepdown_trace"));
    const auto decisions = slurp(dir / "t1" / "decisions.tsv");
    REQUIRE(decisions.rfind("name\tt\tsigma\tdecision\tflags", 0) == 0);
  }
  SECTION("bh dispatch") {
    const auto r = run({"test", "--results", (dir / "res" / "result.json").string(), "--influence",
                        (dir / "res" / "influence.bin").string(), "--method", "bh", "--q", "0.05",
                        "--out", (dir / "t2").string()});
    REQUIRE(r.code == 0);
    const auto json = Json::parse(slurp(dir / "t2" / "discoveries.json"));
    REQUIRE(json.at("method") == "bh");
  }
  SECTION("missing influence file exits 2 with an error JSON naming the path") {
    const auto r = run({"test", "--results", (dir / "res" / "result.json").string(), "--influence",
                        (dir / "res" / "missing.bin").string(), "--out", (dir / "t3").string()});
    REQUIRE(r.code == 2);
    const auto json = Json::parse(r.out);
    REQUIRE(json.at("error").at("type") == "io");
    REQUIRE(json.at("error").at("message").get<std::string>().find("missing.bin") !=
            std::string::npos);
  }
}

TEST_CASE("print-config output re-ingests to an identical run") {
  const auto dir = fresh_dir("drmo_cli_cfg");
  const auto printed = run({"simulate", "--p", "5", "--n", "40", "--m", "2", "--d", "2",
                            "--active", "1", "--seed", "3", "--out", (dir / "direct").string(),
                            "--print-config"});
  REQUIRE(printed.code == 0);
  const auto cfg_path = dir / "cfg.json";
  write_file(cfg_path, printed.out);

  REQUIRE(run({"simulate", "--p", "5", "--n", "40", "--m", "2", "--d", "2", "--active", "1",
               "--seed", "3", "--out", (dir / "direct").string()})
              .code == 0);
  // re-ingest, overriding only the output directory
  REQUIRE(run({"simulate", "--config", cfg_path.string(), "--out", (dir / "from_cfg").string()})
              .code == 0);
  REQUIRE(slurp(dir / "direct" / "observations.tsv") ==
          slurp(dir / "from_cfg" / "observations.tsv"));
  REQUIRE(slurp(dir / "direct" / "truth.json") == slurp(dir / "from_cfg" / "truth.json"));
}

TEST_CASE("unknown config keys are rejected") {
  const auto dir = fresh_dir("drmo_cli_badkey");
  write_file(dir / "bad.json", "{\"frobnicate\": 1}\n");
  const auto r = run({"simulate", "--config", (dir / "bad.json").string()});
  REQUIRE(r.code == 2);
  REQUIRE(Json::parse(r.out).at("error").at("type") == "schema");
}

TEST_CASE("benchmark desk-scale smoke run") {
  const auto dir = fresh_dir("drmo_cli_bench");
  const auto r = run({"benchmark", "--p", "12", "--n", "100", "--m", "3", "--d", "2", "--active",
                      "3", "--reps", "2", "--bootstrap", "200", "--estimands", "ate", "ste",
                      "--methods", "stepdown", "bh", "--seed", "1", "--out", dir.string()});
  REQUIRE(r.code == 0);
  const auto agg = Json::parse(slurp(dir / "aggregate.json"));
  REQUIRE(agg.at("long_running") == false);
  REQUIRE(agg.at("runs").size() == 1);
  REQUIRE(agg.at("runs")[0].at("aggregates").size() == 4);  // 2 estimands x 2 methods
  const auto plot = slurp(dir / "plot_data.tsv");
  int rows = -1;  // minus header
  for (char ch : plot) rows += ch == '\n' ? 1 : 0;
  REQUIRE(rows == 12);  // 4 combos x 3 metrics
  REQUIRE(fs::exists(dir / "replicates.tsv"));
  REQUIRE(fs::exists(dir / "timings.json"));
}

TEST_CASE("paper-scale benchmark config is accepted and marked long-running") {
  const auto r = run({"benchmark", "--p", "8000", "--n", "400", "--m", "100", "--d", "5",
                      "--active", "200", "--reps", "50", "--print-config"});
  REQUIRE(r.code == 0);
  const auto cfg = Json::parse(r.out);
  REQUIRE(cfg.at("p") == 8000);
  ExperimentConfig exp;
  exp.dgp.p = 8000;
  exp.dgp.n = 400;
  exp.dgp.m = 100;
  exp.replicates = 50;
  REQUIRE(is_long_running(exp));
}

TEST_CASE("reps 0 is a parameter error with exit code 2") {
  const auto r = run({"benchmark", "--p", "4", "--n", "20", "--m", "2", "--reps", "0"});
  REQUIRE(r.code == 2);
  REQUIRE(Json::parse(r.out).at("error").at("type") == "parameter");
}

TEST_CASE("scenario defaults switch with the scenario unless overridden") {
  const auto median = run({"simulate", "--scenario", "median_shift", "--print-config"});
  REQUIRE(median.code == 0);
  auto cfg = Json::parse(median.out);
  REQUIRE(cfg.at("theta_max") == 10.0);
  REQUIRE(cfg.at("beta_r") == 2.0);
  const auto overridden =
      run({"simulate", "--scenario", "median_shift", "--theta-max", "3.5", "--print-config"});
  REQUIRE(Json::parse(overridden.out).at("theta_max") == 3.5);
}
