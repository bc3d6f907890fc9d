#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "riskdiff/sampling.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fixture(const std::string& name) {
  return std::string(FIXTURES_DIR) + "/" + name;
}

const fs::path& scratch_root() {
  static const fs::path root = [] {
    const fs::path p = fs::temp_directory_path() / "riskdiff_cli_tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

fs::path fresh_dir(const std::string& hint) {
  static int counter = 0;
  const fs::path p = scratch_root() / (hint + "_" + std::to_string(counter++));
  fs::create_directories(p);
  return p;
}

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path log = scratch_root() / ("log_" + std::to_string(counter++) + ".txt");
  const std::string cmd =
      std::string(RISKDIFF_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  if (WIFEXITED(status)) r.code = WEXITSTATUS(status);
  std::ifstream is(log);
  std::stringstream ss;
  ss << is.rdbuf();
  r.output = ss.str();
  return r;
}

json read_report(const fs::path& dir) {
  std::ifstream is(dir / "report.json");
  REQUIRE(static_cast<bool>(is));
  json doc;
  is >> doc;
  return doc;
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(static_cast<bool>(is));
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("es subcommand reports the dual-consistent tail") {
  const fs::path dir = fresh_dir("es");
  const RunResult r = run_cli("es --model " + fixture("gaussian.json") +
                              " --x 3,4 --alpha 0.95 --n-samples 1000000 --seed 7"
                              " --no-timestamp --out " +
                              dir.string());
  CHECK(r.code == 0);
  CHECK(contains(r.output, "verdict dual_form: pass"));

  const json report = read_report(dir);
  REQUIRE(report.is_object());
  CHECK(report.size() == 4);
  REQUIRE(report.contains("config"));
  REQUIRE(report.contains("results"));
  REQUIRE(report.contains("verdicts"));
  REQUIRE(report.contains("oracle"));
  CHECK(!report["config"].contains("generated_at"));

  const json& res = report["results"];
  CHECK(res["es"].get<double>() == doctest::Approx(10.3173).epsilon(1e-3));
  CHECK(res["var"].get<double>() == doctest::Approx(8.2217).epsilon(1e-3));
  CHECK(res["dual_gap"].get<double>() <= 1e-12 * res["es"].get<double>());
  CHECK(report["verdicts"]["dual_form"]["pass"].get<bool>());
  // Closed-form reference embedded alongside the estimate.
  CHECK(report["oracle"]["es"].get<double>() ==
        doctest::Approx(10.313564037537141).epsilon(1e-12));
  CHECK(std::abs(res["es"].get<double>() - report["oracle"]["es"].get<double>()) <=
        4.0 * res["standard_error"].get<double>());
}

TEST_CASE("timestamps appear unless suppressed") {
  const fs::path dir = fresh_dir("stamp");
  const RunResult r = run_cli("var --model " + fixture("gaussian.json") +
                              " --x 1,0 --alpha 0.9 --n-samples 5000 --seed 1 --out " +
                              dir.string());
  CHECK(r.code == 0);
  const json report = read_report(dir);
  REQUIRE(report["config"].contains("generated_at"));
  const std::string stamp = report["config"]["generated_at"].get<std::string>();
  CHECK(stamp.size() == 20);
  CHECK(stamp.back() == 'Z');
  CHECK(stamp[4] == '-');
  CHECK(stamp[10] == 'T');
}

TEST_CASE("reports are byte-identical across reruns and thread counts") {
  const std::string base = "es --model " + fixture("gaussian.json") +
                           " --x 3,4 --alpha 0.95 --n-samples 50000 --seed 7"
                           " --no-timestamp";
  const fs::path d1 = fresh_dir("repro");
  const fs::path d2 = fresh_dir("repro");
  const fs::path d4 = fresh_dir("repro");
  CHECK(run_cli(base + " --out " + d1.string()).code == 0);
  CHECK(run_cli(base + " --out " + d2.string()).code == 0);
  CHECK(run_cli(base + " --threads 4 --out " + d4.string()).code == 0);
  const std::string r1 = read_file(d1 / "report.json");
  CHECK(r1 == read_file(d2 / "report.json"));
  CHECK(r1 == read_file(d4 / "report.json"));
}

TEST_CASE("simulate writes a lossless sample table") {
  const fs::path dir = fresh_dir("sim");
  const RunResult r = run_cli("simulate --model " + fixture("gaussian.json") +
                              " --x 1,1 --n-samples 1000 --seed 3 --axis 1 --order 1"
                              " --no-timestamp --out " +
                              dir.string());
  CHECK(r.code == 0);
  const json report = read_report(dir);
  CHECK(report["results"]["csv"].get<std::string>() == "samples.csv");
  CHECK(report["results"]["count"].get<std::size_t>() == 1000);

  const riskdiff::SampleSet set = riskdiff::load((dir / "samples.csv").string());
  CHECK(set.count == 1000);
  CHECK(set.losses.size() == 1000);
  REQUIRE(set.has_deriv(1, 1));
  CHECK(set.deriv_column(1, 1).size() == 1000);
  CHECK(riskdiff::mean(set.losses) ==
        doctest::Approx(report["results"]["mean_loss"].get<double>()).epsilon(1e-15));
}

TEST_CASE("es-deriv order 2 fails the premise gate on the smooth portfolio") {
  const fs::path dir = fresh_dir("esd2");
  const RunResult r = run_cli("es-deriv --model " + fixture("gaussian.json") +
                              " --x 3,4 --alpha 0.95 --axis 1 --order 2"
                              " --n-samples 200000 --seed 7 --no-timestamp --out " +
                              dir.string());
  CHECK(r.code == 2);
  CHECK(contains(r.output, "verdict premise: FAIL"));
  const json report = read_report(dir);
  CHECK(!report["verdicts"]["premise"]["pass"].get<bool>());
  CHECK(report["verdicts"]["premise"]["violation_fraction"].get<double>() > 0.01);
  // The estimate is still reported for inspection.
  REQUIRE(report["results"]["tail"]["derivative"].is_object());
  CHECK(report["results"]["tail"]["derivative"]["n"].get<int>() == 2);
  CHECK(report["results"]["tail"]["mode"].get<std::string>() == "continuous_eq319");
}

TEST_CASE("es-deriv passes the premise gate on the additive model") {
  // H = L - q does not depend on x here, so no band member can cross.
  const fs::path dir = fresh_dir("esd1add");
  const RunResult r = run_cli("es-deriv --model " + fixture("additive.json") +
                              " --x 1,2 --alpha 0.95 --axis 1 --order 1"
                              " --n-samples 200000 --seed 7 --no-timestamp --out " +
                              dir.string());
  CHECK(r.code == 0);
  CHECK(contains(r.output, "verdict premise: pass"));
  const json report = read_report(dir);
  CHECK(report["verdicts"]["premise"]["pass"].get<bool>());
  CHECK(report["verdicts"]["premise"]["violation_fraction"].get<double>() == 0.0);
  const double value = report["results"]["tail"]["derivative"]["value"].get<double>();
  CHECK(std::abs(value - 2.0) <= 0.05);
  CHECK(!report.contains("oracle"));
}

TEST_CASE("es-deriv order 1 reports an accurate gradient despite the premise flag") {
  // The linear gaussian loss spreads H on the level set, so the premise probe
  // flags about half the band at any order; the estimate itself is unbiased.
  const fs::path dir = fresh_dir("esd1");
  const RunResult r = run_cli("es-deriv --model " + fixture("gaussian.json") +
                              " --x 3,4 --alpha 0.95 --axis 1 --order 1"
                              " --n-samples 200000 --seed 7 --no-timestamp --out " +
                              dir.string());
  CHECK(r.code == 2);
  const json report = read_report(dir);
  CHECK(!report["verdicts"]["premise"]["pass"].get<bool>());
  const double value = report["results"]["tail"]["derivative"]["value"].get<double>();
  const double oracle = report["oracle"]["es_gradient"].get<double>();
  CHECK(oracle == doctest::Approx(1.2376276845044569).epsilon(1e-12));
  CHECK(std::abs(value - oracle) <= 0.05);
}

TEST_CASE("diverge-check reports the discrepancy against the fd oracle") {
  const fs::path dir = fresh_dir("div");
  const RunResult r = run_cli("diverge-check --model " + fixture("gaussian.json") +
                              " --x 3,4 --alpha 0.95 --axis 1"
                              " --n-samples 200000 --seed 7 --no-timestamp --out " +
                              dir.string());
  CHECK(r.code == 2);
  CHECK(contains(r.output, "discrepancy:"));
  const json report = read_report(dir);
  // The naive tail average of the second pathwise derivative is identically
  // zero for a linear loss, while the true hessian entry is not.
  CHECK(report["results"]["naive"]["derivative"]["value"].get<double>() == 0.0);
  CHECK(report["results"]["discrepancy"].get<double>() > 0.1);
  CHECK(report["oracle"]["es_hessian_diag"].get<double>() ==
        doctest::Approx(0.26402723936095085).epsilon(1e-12));
  CHECK(!report["verdicts"]["premise"]["pass"].get<bool>());
}

TEST_CASE("var-deriv refuses laws without a density") {
  const RunResult r = run_cli("var-deriv --model " + fixture("table5.json") +
                              " --x 1 --alpha 0.6 --axis 1 --n-samples 1000 --seed 1");
  CHECK(r.code == 1);
  CHECK(contains(r.output, "var-deriv requires an absolutely continuous loss law"));
}

TEST_CASE("var-deriv matches the closed-form gradient") {
  const fs::path dir = fresh_dir("vard");
  const RunResult r = run_cli("var-deriv --model " + fixture("gaussian.json") +
                              " --x 3,4 --alpha 0.95 --axis 1"
                              " --n-samples 200000 --seed 7 --no-timestamp --out " +
                              dir.string());
  CHECK(r.code == 0);
  const json report = read_report(dir);
  const double value = report["results"]["value"].get<double>();
  const double oracle = report["oracle"]["var_gradient"].get<double>();
  CHECK(std::abs(value - oracle) <=
        0.02 + 3.0 * report["results"]["standard_error"].get<double>());
  CHECK(report["results"]["count"].get<std::size_t>() >= 30);
}

TEST_CASE("verify-prop1 passes on the piecewise-square table") {
  const fs::path dir = fresh_dir("p1");
  const RunResult r = run_cli("verify-prop1 --model " + fixture("minsq.json") +
                              " --x 1 --axis 1 --order 1 --no-timestamp --out " +
                              dir.string());
  CHECK(r.code == 0);
  CHECK(contains(r.output, "verdict proposition1: pass"));
  const json report = read_report(dir);
  CHECK(report["verdicts"]["proposition1"]["pass"].get<bool>());
  CHECK(report["verdicts"]["proposition1"]["verdict"].get<std::string>() == "pass");
  const json& level = report["results"]["level_set"];
  CHECK(level["estimate"].get<double>() == 0.0);
  CHECK(level["prob_zero_deriv"].get<double>() == 1.0);
}

TEST_CASE("euler allocation closes on the linear portfolio") {
  const fs::path dir = fresh_dir("euler");
  const RunResult r = run_cli("euler --model " + fixture("gaussian.json") +
                              " --x 3,4 --alpha 0.95 --n-samples 200000 --seed 7"
                              " --no-timestamp --out " +
                              dir.string());
  CHECK(r.code == 0);
  const json report = read_report(dir);
  CHECK(report["verdicts"]["euler"]["pass"].get<bool>());
  const json& alloc = report["results"]["allocation"];
  CHECK(alloc["relative_residual"].get<double>() <= 0.01);
  CHECK(alloc["contributions"].size() == 2);
  CHECK(report["oracle"]["es_total_gradient"].get<double>() ==
        doctest::Approx(10.313564037537141).epsilon(1e-12));
}

TEST_CASE("euler refuses undeclared homogeneity") {
  const RunResult r = run_cli("euler --model " + fixture("additive.json") +
                              " --x 1,2 --alpha 0.95 --n-samples 1000 --seed 1");
  CHECK(r.code == 1);
  CHECK(contains(r.output, "declared homogeneity degree 1"));
}

TEST_CASE("lemma1-probe families") {
  const fs::path dir = fresh_dir("l1");
  const RunResult ok = run_cli(
      "lemma1-probe --family bounded --m-schedule 10,100,1000 --n-samples 1000000"
      " --seed 2 --no-timestamp --out " +
      dir.string());
  CHECK(ok.code == 0);
  const json report = read_report(dir);
  CHECK(report["verdicts"]["lemma1"]["pass"].get<bool>());
  CHECK(report["results"]["probe"]["rows"].size() == 3);

  const RunResult bad = run_cli(
      "lemma1-probe --family unbounded --m-schedule 10,100,1000 --n-samples 100000"
      " --seed 2");
  CHECK(bad.code == 2);
  CHECK(contains(bad.output, "verdict lemma1: FAIL"));

  const RunResult typo = run_cli("lemma1-probe --family sideways");
  CHECK(typo.code == 1);
  CHECK(contains(typo.output, "--family: expected bounded, unbounded or empty"));
}

TEST_CASE("convergence table artifacts") {
  const fs::path dir = fresh_dir("conv");
  const RunResult r = run_cli("convergence --model " + fixture("gaussian.json") +
                              " --x 3,4 --alpha 0.95 --axis 1 --target es"
                              " --m-schedule 8,16,32 --n-samples 20000 --seed 3"
                              " --no-timestamp --out " +
                              dir.string());
  // The verdict reflects observed quotient stability; both outcomes must
  // still produce a complete report and table.
  CHECK((r.code == 0 || r.code == 2));
  const json report = read_report(dir);
  CHECK(report["results"]["table"]["rows"].size() == 3);
  CHECK(report["results"]["csv"].get<std::string>() == "table.csv");
  CHECK((report["verdicts"]["stable"]["pass"].get<bool>() == (r.code == 0)));
  const std::string table = read_file(dir / "table.csv");
  CHECK(table.rfind("m,estimate\n", 0) == 0);
  CHECK(contains(table, "# extrapolated,"));
  CHECK(contains(table, "8,"));
}

TEST_CASE("usage errors exit with code 1") {
  CHECK(run_cli("frobnicate").code == 1);
  CHECK(run_cli("").code == 1);

  const RunResult bad_x = run_cli("es --model " + fixture("gaussian.json") +
                                  " --x 3,oops --n-samples 1000");
  CHECK(bad_x.code == 1);
  CHECK(contains(bad_x.output, "--x: cannot parse 'oops' as a number"));

  const RunResult no_model = run_cli("es --x 1 --n-samples 1000");
  CHECK(no_model.code == 1);
  CHECK(contains(no_model.output, "--model is required"));

  const RunResult bad_alpha = run_cli("es --model " + fixture("gaussian.json") +
                                      " --x 1,0 --alpha 1.5 --n-samples 1000");
  CHECK(bad_alpha.code == 1);
  CHECK(contains(bad_alpha.output, "--alpha must lie strictly inside (0, 1)"));

  const RunResult bad_n = run_cli("es --model " + fixture("gaussian.json") +
                                  " --x 1,0 --n-samples 0");
  CHECK(bad_n.code == 1);
  CHECK(contains(bad_n.output, "--n-samples must be at least 1"));

  const RunResult bad_mode = run_cli("es-deriv --model " + fixture("gaussian.json") +
                                     " --x 1,0 --axis 1 --n-samples 1000 --mode wild");
  CHECK(bad_mode.code == 1);
  CHECK(contains(bad_mode.output,
                 "--mode: expected auto, continuous_eq319 or general_eq304"));
}

TEST_CASE("config files provide defaults and flags win") {
  const fs::path dir = fresh_dir("cfg");
  const fs::path cfg = dir / "cfg.json";
  {
    json doc;
    doc["model"] = fixture("gaussian.json");
    doc["x"] = {3.0, 4.0};
    doc["alpha"] = 0.9;
    doc["n_samples"] = 50000;
    std::ofstream os(cfg);
    os << doc.dump(2);
  }

  const fs::path d1 = fresh_dir("cfg_run");
  const RunResult r1 = run_cli("es --config " + cfg.string() +
                               " --seed 7 --no-timestamp --out " + d1.string());
  CHECK(r1.code == 0);
  const json rep1 = read_report(d1);
  CHECK(rep1["config"]["alpha"].get<double>() == 0.9);
  CHECK(rep1["config"]["n_samples"].get<long>() == 50000);
  CHECK(rep1["config"]["x"] == json({3.0, 4.0}));

  const fs::path d2 = fresh_dir("cfg_run");
  const RunResult r2 = run_cli("es --config " + cfg.string() +
                               " --alpha 0.95 --seed 7 --no-timestamp --out " +
                               d2.string());
  CHECK(r2.code == 0);
  CHECK(read_report(d2)["config"]["alpha"].get<double>() == 0.95);
}

TEST_CASE("config files reject unknown and misplaced fields") {
  const fs::path dir = fresh_dir("cfgbad");
  const fs::path bogus = dir / "bogus.json";
  {
    std::ofstream os(bogus);
    os << "{\"bogus\": 1}";
  }
  const RunResult r = run_cli("es --config " + bogus.string() +
                              " --model " + fixture("gaussian.json") + " --x 1,0");
  CHECK(r.code == 1);
  CHECK(contains(r.output, "config.bogus: unknown field"));

  const fs::path misplaced = dir / "misplaced.json";
  {
    std::ofstream os(misplaced);
    os << "{\"fd_step\": 0.1}";
  }
  const RunResult r2 = run_cli("es --config " + misplaced.string() +
                               " --model " + fixture("gaussian.json") + " --x 1,0");
  CHECK(r2.code == 1);
  CHECK(contains(r2.output, "config.fd_step: not a field of subcommand es"));

  const fs::path broken = dir / "broken.json";
  {
    std::ofstream os(broken);
    os << "{oops";
  }
  const RunResult r3 = run_cli("es --config " + broken.string() +
                               " --model " + fixture("gaussian.json") + " --x 1,0");
  CHECK(r3.code == 1);
  CHECK(contains(r3.output, "config file"));
}
