#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "densmed/sim.hpp"

using namespace densmed;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::filesystem::path tmp_dir() {
  std::filesystem::path p(DENSMED_TEST_TMP);
  std::filesystem::create_directories(p);
  return p;
}

// Tiny chains for smoke tests; mediator and outcome retain 30 draws each.
SimMcmc tiny_mcmc() {
  SimMcmc m;
  m.lddp_iterations = 150;
  m.lddp_burn_in = 30;
  m.lddp_thinning = 4;
  m.aft_iterations = 150;
  m.aft_burn_in = 30;
  m.aft_thinning = 4;
  m.grid_points = 60;
  m.rd_draws = 50;
  m.linear_draws = 400;
  return m;
}

}  // namespace

TEST_CASE("normal mixture: validation, moments, mgf, sampling") {
  NormalMixture mix{{0.75, 0.25}, {25.5, 31.5}, {2.5, 4.0}};
  mix.validate();
  REQUIRE_THAT(mix.mean(), WithinAbs(27.0, 1e-12));
  REQUIRE(mix.mgf(0.0) == 1.0);

  // Single normal: mgf has the closed form exp(mu t + sd^2 t^2 / 2).
  NormalMixture one{{1.0}, {27.0}, {3.5}};
  double t = 0.029;
  REQUIRE_THAT(one.mgf(t), WithinRel(std::exp(27.0 * t + 0.5 * 3.5 * 3.5 * t * t), 1e-14));
  // Mixture mgf is the weighted sum of component mgfs.
  NormalMixture a{{1.0}, {25.5}, {2.5}}, b{{1.0}, {31.5}, {4.0}};
  REQUIRE_THAT(mix.mgf(t), WithinRel(0.75 * a.mgf(t) + 0.25 * b.mgf(t), 1e-14));

  // pdf integrates to ~1, cdf is monotone 0 -> 1.
  double lo = 10.0, hi = 50.0, step = 0.01, mass = 0.0;
  for (double m = lo; m < hi; m += step) mass += mix.pdf(m + step / 2) * step;
  REQUIRE_THAT(mass, WithinAbs(1.0, 1e-6));
  REQUIRE(mix.cdf(lo) < 1e-8);
  REQUIRE(mix.cdf(60.0) > 1.0 - 1e-9);
  REQUIRE(mix.cdf(28.0) > mix.cdf(26.0));

  // Sample moments match the mixture.
  Rng rng(7);
  int n = 200000;
  std::vector<double> draws(static_cast<std::size_t>(n));
  for (auto& d : draws) d = mix.sample(rng);
  double var = 0.0;
  for (std::size_t k = 0; k < mix.weights.size(); ++k)
    var += mix.weights[k] * (mix.sds[k] * mix.sds[k] +
                             (mix.means[k] - 27.0) * (mix.means[k] - 27.0));
  REQUIRE_THAT(mean_of(draws), WithinAbs(27.0, 4.0 * std::sqrt(var / n)));
  REQUIRE_THAT(sd_of(draws), WithinAbs(std::sqrt(var), 0.03));

  REQUIRE_THROWS_WITH((NormalMixture{{0.5, 0.6}, {1.0, 2.0}, {1.0, 1.0}}.validate()),
                      ContainsSubstring("sum to 1"));
  REQUIRE_THROWS_WITH((NormalMixture{{1.0}, {1.0}, {0.0}}.validate()),
                      ContainsSubstring("positive"));
  REQUIRE_THROWS_WITH((NormalMixture{{1.0}, {1.0, 2.0}, {1.0}}.validate()),
                      ContainsSubstring("equal length"));
  REQUIRE_THROWS_WITH((NormalMixture{}.validate()), ContainsSubstring("at least one"));
}

TEST_CASE("scenarios: target mean 27, black law, theta regimes") {
  for (auto k : {ScenarioKind::location_shift, ScenarioKind::right_tailed, ScenarioKind::bimodal,
                 ScenarioKind::trinomial}) {
    for (auto r : {ThetaRegime::base, ThetaRegime::base_interaction, ThetaRegime::doubled,
                   ThetaRegime::doubled_interaction}) {
      Scenario sc = make_scenario(k, r);
      REQUIRE_THAT(sc.white_law.mean(), WithinAbs(27.0, 1e-9));
      REQUIRE(sc.black_law.means == std::vector<double>{29.0});
      REQUIRE(sc.black_law.sds == std::vector<double>{3.5});
      REQUIRE(sc.nu == 0.82);
      REQUIRE(sc.n_per_group == 750);
      REQUIRE(sc.truncation_time == 1826.25);
      REQUIRE(sc.target_censoring == 0.65);
    }
  }
  Eigen::Vector4d th = make_scenario(ScenarioKind::bimodal, ThetaRegime::base_interaction).theta;
  REQUIRE(th(0) == 7.56);
  REQUIRE(th(1) == -0.88);
  REQUIRE(th(2) == 0.029);
  REQUIRE(th(3) == 0.022);
  th = make_scenario(ScenarioKind::bimodal, ThetaRegime::doubled_interaction).theta;
  REQUIRE(th(1) == -1.76);
  REQUIRE(th(2) == 0.058);
  REQUIRE(th(3) == 0.044);
  REQUIRE(make_scenario(ScenarioKind::bimodal, ThetaRegime::base).theta(3) == 0.0);
  REQUIRE(make_scenario(ScenarioKind::bimodal, ThetaRegime::doubled).theta(3) == 0.0);

  REQUIRE(parse_scenario("Trinomial") == ScenarioKind::trinomial);
  REQUIRE(parse_regime("doubled_interaction") == ThetaRegime::doubled_interaction);
  REQUIRE(parse_method("Density") == SimMethod::density);
  for (auto k : {ScenarioKind::location_shift, ScenarioKind::right_tailed, ScenarioKind::bimodal,
                 ScenarioKind::trinomial})
    REQUIRE(parse_scenario(scenario_name(k)) == k);
  REQUIRE_THROWS_WITH(parse_scenario("Quadmodal"), ContainsSubstring("unknown scenario"));
  REQUIRE_THROWS_WITH(parse_regime("tripled"), ContainsSubstring("unknown theta regime"));
  REQUIRE_THROWS_WITH(parse_method("Sieve"), ContainsSubstring("unknown method"));
}

TEST_CASE("generate_dataset: layout, mediator law, determinism") {
  Scenario sc = make_scenario(ScenarioKind::location_shift, ThetaRegime::base);
  REQUIRE_THROWS_WITH(generate_dataset(sc, 1), ContainsSubstring("not calibrated"));

  sc.censoring = {1.0, 3000.0};
  auto recs = generate_dataset(sc, 42);
  REQUIRE(recs.size() == 1500);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    REQUIRE(recs[i].group == (i < 750 ? 0 : 1));
    REQUIRE(recs[i].covariates.empty());
    REQUIRE(recs[i].time > 0.0);
    REQUIRE(recs[i].time <= sc.truncation_time);
  }

  auto again = generate_dataset(sc, 42);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    REQUIRE(recs[i].time == again[i].time);
    REQUIRE(recs[i].mediator == again[i].mediator);
    REQUIRE(recs[i].event == again[i].event);
  }
  auto other = generate_dataset(sc, 43);
  REQUIRE(recs[0].mediator != other[0].mediator);

  // Large-sample White mediator moments.
  Scenario big = sc;
  big.n_per_group = 40000;
  auto brecs = generate_dataset(big, 7);
  std::vector<double> wm;
  for (const auto& r : brecs)
    if (r.group == 0) wm.push_back(r.mediator);
  REQUIRE(wm.size() == 40000);
  REQUIRE_THAT(mean_of(wm), WithinAbs(27.0, 0.06));
  REQUIRE_THAT(sd_of(wm), WithinAbs(3.5, 0.05));
}

TEST_CASE("generate_dataset: group contrast in latent times matches e^theta1") {
  // With theta3 = 0, T exp(-theta2 M) = exp(theta0 + theta1 R) exp(nu eps),
  // so the group ratio of its means estimates e^theta1 regardless of M.
  Scenario sc = make_scenario(ScenarioKind::location_shift, ThetaRegime::base);
  sc.truncation_time = 1e300;  // disable truncation and censoring: latent law
  sc.censoring = {1.0, 1e300};
  sc.n_per_group = 150000;
  auto recs = generate_dataset(sc, 11);
  double s0 = 0.0, s1 = 0.0;
  for (const auto& r : recs) {
    REQUIRE(r.event == 1);
    (r.group ? s1 : s0) += r.time * std::exp(-sc.theta(2) * r.mediator);
  }
  REQUIRE_THAT(s1 / s0, WithinRel(std::exp(-0.88), 0.012));
}

TEST_CASE("calibrate_censoring: hits target, equivariance, bounds errors") {
  Scenario sc = make_scenario(ScenarioKind::location_shift, ThetaRegime::base);
  CensoringModel cal = calibrate_censoring(sc, 5);
  REQUIRE(cal.shape == 1.0);
  REQUIRE(cal.scale > 0.0);

  // Fresh-seed pilot reproduces 65% +- 1%.
  sc.censoring = cal;
  REQUIRE_THAT(pilot_censoring_fraction(sc, 999), WithinAbs(0.65, 0.01));

  // Study-sized datasets stay near the target.
  for (int r = 0; r < 20; ++r) {
    auto recs = generate_dataset(sc, 100 + static_cast<std::uint64_t>(r));
    double f = censored_fraction(recs);
    REQUIRE(f >= 0.60);
    REQUIRE(f <= 0.70);
  }

  // Doubling every survival time (and the truncation point) doubles the scale.
  Scenario twice = make_scenario(ScenarioKind::location_shift, ThetaRegime::base);
  twice.theta(0) += std::log(2.0);
  twice.truncation_time *= 2.0;
  CensoringModel cal2 = calibrate_censoring(twice, 5);
  REQUIRE_THAT(cal2.scale / cal.scale, WithinRel(2.0, 1e-6));

  // Unreachable targets are rejected, not silently approximated.
  Scenario zero = make_scenario(ScenarioKind::location_shift, ThetaRegime::base);
  zero.target_censoring = 0.0;
  REQUIRE_THROWS_WITH(calibrate_censoring(zero, 5), ContainsSubstring("bounds exhausted"));
  // At doubled effects with interaction, truncation alone censors more than
  // the target window allows; calibration must refuse rather than return a
  // scale that cannot hit 65%.
  Scenario hot = make_scenario(ScenarioKind::location_shift, ThetaRegime::doubled_interaction);
  REQUIRE_THROWS_WITH(calibrate_censoring(hot, 5), ContainsSubstring("bounds exhausted"));
}

TEST_CASE("calibrate_censoring: all four scenario shapes reach the window") {
  for (auto k : {ScenarioKind::location_shift, ScenarioKind::right_tailed, ScenarioKind::bimodal,
                 ScenarioKind::trinomial}) {
    Scenario sc = make_scenario(k, ThetaRegime::base);
    sc.censoring = calibrate_censoring(sc, 21);
    REQUIRE_THAT(pilot_censoring_fraction(sc, 777), WithinAbs(0.65, 0.01));
  }
}

TEST_CASE("true_rd: closed form and quadrature cross-check") {
  // No interaction: the MGF ratio is exactly 1.
  Scenario sc = make_scenario(ScenarioKind::trinomial, ThetaRegime::base);
  REQUIRE(true_rd(sc) == std::exp(-0.88));

  // Location-shift with interaction: e^{-0.88 + 27 theta3 + (t1^2 - t0^2) sd^2/2}.
  Scenario ls = make_scenario(ScenarioKind::location_shift, ThetaRegime::base_interaction);
  double expect = std::exp(-0.88 + 27.0 * 0.022 +
                           0.5 * 3.5 * 3.5 * (0.051 * 0.051 - 0.029 * 0.029));
  REQUIRE_THAT(true_rd(ls), WithinRel(expect, 1e-12));
  REQUIRE_THAT(true_rd(ls), WithinAbs(0.7596, 5e-4));

  // Every scenario/regime pair passes the internal 1e-8 quadrature check.
  for (auto k : {ScenarioKind::location_shift, ScenarioKind::right_tailed, ScenarioKind::bimodal,
                 ScenarioKind::trinomial}) {
    for (auto r : {ThetaRegime::base_interaction, ThetaRegime::doubled_interaction}) {
      double v = true_rd(make_scenario(k, r));
      REQUIRE(std::isfinite(v));
      REQUIRE(v > 0.0);
      REQUIRE(v < 1.0);
    }
  }
}

TEST_CASE("run_replication: bit-exact in isolation, seed separation") {
  Scenario sc = make_scenario(ScenarioKind::location_shift, ThetaRegime::base_interaction);
  sc.censoring = {1.0, 2500.0};
  sc.n_per_group = 300;
  std::vector<SimMethod> fast{SimMethod::linear, SimMethod::traditional};
  SimMcmc mc = tiny_mcmc();

  auto a = run_replication(sc, fast, mc, 77, 3);
  auto b = run_replication(sc, fast, mc, 77, 3);
  REQUIRE(a.estimates.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    REQUIRE(a.estimates[k].value.has_value());
    REQUIRE(a.estimates[k].value == b.estimates[k].value);
  }
  REQUIRE(a.realized_censoring == b.realized_censoring);

  auto c = run_replication(sc, fast, mc, 77, 4);
  REQUIRE(c.estimates[0].value != a.estimates[0].value);

  // The full Bayesian pipeline is reproducible too.
  std::vector<SimMethod> dens{SimMethod::density};
  auto d1 = run_replication(sc, dens, mc, 77, 0);
  auto d2 = run_replication(sc, dens, mc, 77, 0);
  REQUIRE(d1.estimates[0].value.has_value());
  REQUIRE(d1.estimates[0].value == d2.estimates[0].value);
  REQUIRE(std::isfinite(*d1.estimates[0].value));
}

TEST_CASE("sim mcmc config validation") {
  SimMcmc m = tiny_mcmc();
  REQUIRE(m.lddp_retained() == 30);
  REQUIRE(m.aft_retained() == 30);
  m.validate();
  SimMcmc full = SimMcmc::full();
  full.validate();
  REQUIRE(full.lddp_retained() == full.aft_retained());

  SimMcmc bad = tiny_mcmc();
  bad.aft_thinning = 5;
  REQUIRE_THROWS_WITH(bad.validate(), ContainsSubstring("same number of draws"));
  bad = tiny_mcmc();
  bad.lddp_burn_in = 200;
  REQUIRE_THROWS_WITH(bad.validate(), ContainsSubstring("chain lengths"));
}

TEST_CASE("run_study: aggregation identities, csv, determinism") {
  StudySpec spec;
  spec.scenarios = {ScenarioKind::location_shift};
  spec.regimes = {ThetaRegime::base};
  spec.methods = {SimMethod::traditional, SimMethod::linear};
  spec.replications = 8;
  spec.seed = 5;
  spec.n_per_group_override = 400;
  spec.mcmc = tiny_mcmc();

  std::ostringstream log;
  auto rows = run_study(spec, &log);
  REQUIRE(rows.size() == 2);
  REQUIRE(rows[0].method == SimMethod::traditional);
  REQUIRE(rows[1].method == SimMethod::linear);
  double truth = true_rd(make_scenario(ScenarioKind::location_shift, ThetaRegime::base));
  for (const auto& row : rows) {
    REQUIRE(row.scenario == ScenarioKind::location_shift);
    REQUIRE(row.regime == ThetaRegime::base);
    REQUIRE(row.n_ok + row.n_failed == 8);
    REQUIRE(row.n_ok == 8);
    REQUIRE_THAT(row.rmse * row.rmse, WithinAbs(row.bias * row.bias + row.sd * row.sd, 1e-12));
    REQUIRE(std::abs(row.bias) < 0.15);
    REQUIRE(row.sd < 0.25);
  }
  REQUIRE(truth == std::exp(-0.88));
  REQUIRE(log.str().empty());

  auto rows2 = run_study(spec, &log);
  StudySpec threaded = spec;
  threaded.threads = 3;
  auto rows3 = run_study(threaded, &log);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    REQUIRE(rows[i].rmse == rows2[i].rmse);
    REQUIRE(rows[i].bias == rows3[i].bias);
    REQUIRE(rows[i].sd == rows3[i].sd);
  }

  auto csv = (tmp_dir() / "metrics.csv").string();
  write_metrics_csv(csv, rows);
  std::ifstream f(csv);
  std::string line;
  REQUIRE(std::getline(f, line));
  REQUIRE(line == "method,scenario,theta_regime,rmse,bias,sd,n_ok,n_failed");
  REQUIRE(std::getline(f, line));
  REQUIRE_THAT(line, ContainsSubstring("Traditional,LocationShift,base,"));
  REQUIRE_THAT(line, ContainsSubstring(",8,0"));
  REQUIRE(std::getline(f, line));
  REQUIRE_THAT(line, ContainsSubstring("Linear,LocationShift,base,"));
  REQUIRE_FALSE(std::getline(f, line));
}

TEST_CASE("run_study: failed replications are counted and logged") {
  // Tiny target samples leave the top category empty often enough that the
  // categorical mediator fit must fail for some replications.
  StudySpec spec;
  spec.scenarios = {ScenarioKind::trinomial};
  spec.regimes = {ThetaRegime::base};
  spec.methods = {SimMethod::bcl};
  spec.replications = 8;
  spec.seed = 3;
  spec.n_per_group_override = 60;
  spec.mcmc = tiny_mcmc();

  std::ostringstream log;
  auto rows = run_study(spec, &log);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].n_ok + rows[0].n_failed == 8);
  REQUIRE(rows[0].n_failed >= 1);
  REQUIRE(rows[0].n_ok >= 1);
  REQUIRE(std::isfinite(rows[0].rmse));
  REQUIRE_THAT(log.str(), ContainsSubstring("replication failed"));
  REQUIRE_THAT(log.str(), ContainsSubstring("method=BCL"));
  REQUIRE_THAT(log.str(), ContainsSubstring("scenario=Trinomial"));
}

TEST_CASE("run_study: density method smoke") {
  StudySpec spec;
  spec.scenarios = {ScenarioKind::location_shift};
  spec.regimes = {ThetaRegime::base_interaction};
  spec.methods = {SimMethod::density};
  spec.replications = 3;
  spec.seed = 9;
  spec.n_per_group_override = 150;
  spec.mcmc = tiny_mcmc();

  std::ostringstream log;
  auto rows = run_study(spec, &log);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].n_ok == 3);
  REQUIRE(std::isfinite(rows[0].rmse));
  REQUIRE(rows[0].rmse < 0.6);

  StudySpec empty = spec;
  empty.methods = {};
  REQUIRE_THROWS_WITH(run_study(empty, &log), ContainsSubstring("no methods"));
}
