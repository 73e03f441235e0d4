#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "densmed/sim.hpp"

using namespace densmed;
using Catch::Matchers::ContainsSubstring;

namespace {

namespace fs = std::filesystem;

fs::path tmp_dir(const std::string& sub) {
  fs::path p = fs::path(DENSMED_TEST_TMP) / sub;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(DENSMED_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  for (std::string l; std::getline(ss, l);) out.push_back(l);
  return out;
}

// Small synthetic dataset with a binary covariate, written once per test run.
fs::path make_dataset(const fs::path& dir, int n_per_group) {
  Scenario sc = make_scenario(ScenarioKind::location_shift, ThetaRegime::base);
  sc.n_per_group = n_per_group;
  sc.censoring = calibrate_censoring(sc);
  auto recs = generate_dataset(sc, 11);
  Dataset ds;
  ds.schema.factors = {{"sex", {"f", "m"}}};
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].covariates = {static_cast<int>(i % 2)};
    ds.records.push_back(recs[i]);
  }
  fs::path path = dir / "data.csv";
  write_dataset(path.string(), ds);
  return path;
}

const char* kAnalyzeConfig = R"({
  "lddp": {"truncation": 10, "iterations": 300, "burn_in": 100, "thinning": 4},
  "aft": {"iterations": 350, "burn_in": 100, "thinning": 5},
  "bootstrap": 12,
  "rd_draws": 80,
  "linear_draws": 200,
  "grid_points": 40
})";

fs::path write_config(const fs::path& dir, const char* text) {
  fs::path p = dir / "config.json";
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("simulate command writes a deterministic metrics table", "[cli]") {
  auto dir = tmp_dir("cli_sim");
  std::string base = "simulate --scenario locationshift --theta base --reps 2 --seed 7 "
                     "--n-per-group 150 --method Linear,Traditional ";
  REQUIRE(run_cli(base + "--out-dir " + (dir / "a").string()) == 0);
  REQUIRE(run_cli(base + "--out-dir " + (dir / "b").string()) == 0);

  std::string metrics = slurp(dir / "a" / "metrics.csv");
  auto rows = lines_of(metrics);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == "method,scenario,theta_regime,rmse,bias,sd,n_ok,n_failed");
  CHECK_THAT(rows[1], ContainsSubstring("Linear,LocationShift,base,"));
  CHECK_THAT(rows[2], ContainsSubstring("Traditional,LocationShift,base,"));

  CHECK(metrics == slurp(dir / "b" / "metrics.csv"));
  CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
  CHECK_THAT(slurp(dir / "a" / "manifest.json"), ContainsSubstring("\"config_hash\""));
}

TEST_CASE("bad invocations are usage errors with exit code 2", "[cli]") {
  auto dir = tmp_dir("cli_usage");
  CHECK(run_cli("simulate --scenario nope --seed 1 --out-dir " + dir.string()) == 2);
  CHECK(run_cli("simulate --reps 2 --out-dir " + dir.string()) == 2);  // no seed anywhere
  CHECK(run_cli("analyze --data " + (dir / "missing.csv").string() + " --seed 1") == 2);
  CHECK(run_cli("") == 2);  // a subcommand is required

  std::ofstream(dir / "bad.json") << "{\"sedd\": 3}";
  CHECK(run_cli("simulate --seed 1 --config " + (dir / "bad.json").string()) == 2);
}

TEST_CASE("analyze writes the documented tables and reruns byte-identically", "[cli]") {
  auto dir = tmp_dir("cli_analyze");
  auto data = make_dataset(dir, 120);
  auto cfg = write_config(dir, kAnalyzeConfig);
  std::string base = "analyze --data " + data.string() + " --config " + cfg.string() +
                     " --seed 3 ";
  REQUIRE(run_cli(base + "--out-dir " + (dir / "a").string()) == 0);
  REQUIRE(run_cli(base + "--out-dir " + (dir / "b").string()) == 0);

  std::string rd = slurp(dir / "a" / "rd.csv");
  auto rows = lines_of(rd);
  REQUIRE(rows[0] == "stratum,method,estimate,lower,upper");
  // (2 strata + marginal) rows for each of the four default methods
  REQUIRE(rows.size() == 1 + 3 * 4);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    auto cells = split(rows[i], ',');
    REQUIRE(cells.size() == 5);
    double est = parse_double(cells[2], "estimate");
    double lo = parse_double(cells[3], "lower");
    double hi = parse_double(cells[4], "upper");
    CHECK(est > 0.0);
    CHECK(lo <= est);
    CHECK(est <= hi);
  }
  CHECK(lines_of(slurp(dir / "a" / "disparity.csv"))[0] == "stratum,estimate,lower,upper");
  CHECK(lines_of(slurp(dir / "a" / "reduction.csv"))[0] == "stratum,method,estimate,lower,upper");
  CHECK(lines_of(slurp(dir / "a" / "density_grid.csv"))[0] == "stratum,iteration,m,f,F");

  for (const char* f : {"rd.csv", "disparity.csv", "reduction.csv", "rd_draws.csv",
                        "density_grid.csv", "manifest.json"})
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
}

TEST_CASE("a stratum without target-group subjects is reported unavailable", "[cli]") {
  auto dir = tmp_dir("cli_degenerate");
  auto data = make_dataset(dir, 120);

  // move every group-0 subject out of the sex=m stratum
  Dataset ds = load_dataset(data.string());
  for (auto& r : ds.records)
    if (r.group == 0 && r.covariates[0] == 1) r.covariates[0] = 0;
  fs::path degenerate = dir / "degenerate.csv";
  write_dataset(degenerate.string(), ds);

  auto cfg = write_config(dir, kAnalyzeConfig);
  REQUIRE(run_cli("analyze --data " + degenerate.string() + " --config " + cfg.string() +
                  " --seed 3 --method Density,Traditional --out-dir " +
                  (dir / "out").string()) == 0);
  auto rows = lines_of(slurp(dir / "out" / "rd.csv"));
  bool saw_na = false;
  for (const auto& r : rows)
    if (r.rfind("sex=m,", 0) == 0) {
      CHECK_THAT(r, ContainsSubstring("NA,NA,NA"));
      saw_na = true;
    }
  CHECK(saw_na);
  // the unavailable stratum has positive weight, so the marginal is unavailable too
  for (const auto& r : rows)
    if (r.rfind("(marginal),", 0) == 0) CHECK_THAT(r, ContainsSubstring("NA,NA,NA"));
}

TEST_CASE("lrt lists candidate blocks in a fixed order", "[cli]") {
  auto dir = tmp_dir("cli_lrt");
  auto data = make_dataset(dir, 150);
  REQUIRE(run_cli("lrt --data " + data.string() + " --out-dir " + (dir / "a").string()) == 0);
  REQUIRE(run_cli("lrt --data " + data.string() + " --out-dir " + (dir / "b").string()) == 0);
  auto rows = lines_of(slurp(dir / "a" / "lrt.csv"));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == "block,statistic,df,p_value,loglik_full,loglik_nested");
  CHECK_THAT(rows[1], ContainsSubstring("group:sex,"));
  CHECK_THAT(rows[2], ContainsSubstring("mediator:sex,"));
  CHECK(slurp(dir / "a" / "lrt.csv") == slurp(dir / "b" / "lrt.csv"));
}

TEST_CASE("density-grid exports grids and its saved fit can seed analyze", "[cli]") {
  auto dir = tmp_dir("cli_grid");
  auto data = make_dataset(dir, 120);
  std::ofstream(dir / "grid.json") << R"({
    "lddp": {"truncation": 10, "iterations": 300, "burn_in": 100, "thinning": 4}
  })";
  fs::path fit = dir / "fit.json";
  REQUIRE(run_cli("density-grid --data " + data.string() + " --config " +
                  (dir / "grid.json").string() + " --seed 3 --grid-points 40 --save-fit " +
                  fit.string() + " --out-dir " + (dir / "grid").string()) == 0);
  auto rows = lines_of(slurp(dir / "grid" / "density_grid.csv"));
  CHECK(rows[0] == "stratum,iteration,m,f,F");
  // 2 strata x 50 retained iterations x 40 grid points
  CHECK(rows.size() == 1 + 2 * 50 * 40);

  auto cfg = write_config(dir, kAnalyzeConfig);
  // retained counts differ (50 vs 50: grid lddp retains (300-100)/4 = 50, analyze aft (350-100)/5 = 50)
  REQUIRE(run_cli("analyze --data " + data.string() + " --config " + cfg.string() +
                  " --seed 3 --method Density --lddp-fit " + fit.string() + " --out-dir " +
                  (dir / "an").string()) == 0);
  CHECK_THAT(slurp(dir / "an" / "rd.csv"), ContainsSubstring("Density"));
}

TEST_CASE("runtime failures exit with code 1", "[cli]") {
  auto dir = tmp_dir("cli_runtime");
  // valid file, but every subject censored: no survival model can be fit
  std::ofstream(dir / "all_censored.csv") << "time,event,group,mediator\n"
                                             "100,0,0,25\n200,0,0,27\n150,0,1,29\n300,0,1,31\n";
  CHECK(run_cli("analyze --data " + (dir / "all_censored.csv").string() +
                " --seed 1 --method Traditional --out-dir " + (dir / "out").string()) == 1);
}
