#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "densmed/mediators.hpp"
#include "densmed/rd.hpp"

using namespace densmed;

namespace {

struct MixComp {
  double w, mu, sd;
};

// Density grid whose every iteration is the same normal mixture.
ConditionalDensityGrid fixed_mixture_grid(const std::vector<MixComp>& comps, int iterations,
                                          double lo, double hi, int points) {
  ConditionalDensityGrid g;
  g.grid = Eigen::VectorXd::LinSpaced(points, lo, hi);
  g.density.resize(iterations, points);
  g.cdf.resize(iterations, points);
  for (int k = 0; k < points; ++k) {
    double f = 0.0, cf = 0.0;
    for (const auto& c : comps) {
      f += c.w * normal_pdf(g.grid(k), c.mu, c.sd);
      cf += c.w * normal_cdf(g.grid(k), c.mu, c.sd);
    }
    g.density.col(k).setConstant(f);
    g.cdf.col(k).setConstant(cf);
  }
  return g;
}

// Outcome fit with `iterations` identical posterior draws.
AftFit fixed_aft_draws(const DesignMatrixSpec& spec, const Eigen::VectorXd& theta, double nu,
                       int iterations) {
  AftFit f;
  f.spec = spec;
  f.layout = ColumnLayout::build(spec);
  REQUIRE(f.layout.n_cols == theta.size());
  f.theta = theta;
  f.nu = nu;
  f.converged = true;
  f.kind = FitKind::bayes;
  f.draws.resize(iterations, theta.size() + 1);
  for (int t = 0; t < iterations; ++t) {
    f.draws.row(t).head(theta.size()) = theta.transpose();
    f.draws(t, theta.size()) = nu;
  }
  return f;
}

DesignMatrixSpec linear_interaction_spec() {
  DesignMatrixSpec spec;
  spec.basis = MediatorBasis::polynomial(1);
  spec.group_mediator = true;
  return spec;
}

}  // namespace

TEST_CASE("interval summaries take means and type-7 quantile bounds", "[rd]") {
  std::vector<double> constant(40, 2.5);
  auto s = interval_summary(constant);
  REQUIRE(s.point == 2.5);
  REQUIRE(s.lower == 2.5);
  REQUIRE(s.upper == 2.5);
  REQUIRE(s.level == 0.95);

  std::vector<double> ladder(100);
  for (int i = 0; i < 100; ++i) ladder[static_cast<std::size_t>(i)] = i + 1.0;
  auto sl = interval_summary(ladder);
  REQUIRE_THAT(sl.point, Catch::Matchers::WithinAbs(50.5, 1e-12));
  REQUIRE_THAT(sl.lower, Catch::Matchers::WithinAbs(3.475, 1e-12));
  REQUIRE_THAT(sl.upper, Catch::Matchers::WithinAbs(97.525, 1e-12));

  auto s80 = interval_summary(ladder, 0.8);
  REQUIRE(s80.lower > sl.lower);
  REQUIRE(s80.upper < sl.upper);

  REQUIRE_THROWS_AS(interval_summary(std::vector<double>{}), Error);
  REQUIRE_THROWS_AS(interval_summary(ladder, 1.0), Error);
}

TEST_CASE("marginal draws are stratum-weighted averages", "[rd]") {
  std::vector<std::vector<double>> one{{0.7, 0.8, 0.9}};
  Eigen::VectorXd w1 = Eigen::VectorXd::Constant(1, 1.0);
  REQUIRE(rd_marginal(one, w1) == one[0]);

  std::vector<std::vector<double>> equal{{0.7, 0.8}, {0.7, 0.8}};
  Eigen::VectorXd w2(2);
  w2 << 0.3, 0.7;
  auto me = rd_marginal(equal, w2);
  REQUIRE_THAT(me[0], Catch::Matchers::WithinAbs(0.7, 1e-15));
  REQUIRE_THAT(me[1], Catch::Matchers::WithinAbs(0.8, 1e-15));

  std::vector<std::vector<double>> constant{{0.8, 0.8}, {1.2, 1.2}};
  Eigen::VectorXd w3(2);
  w3 << 0.25, 0.75;
  auto m = rd_marginal(constant, w3);
  REQUIRE_THAT(m[0], Catch::Matchers::WithinAbs(1.1, 1e-15));
  REQUIRE_THAT(m[1], Catch::Matchers::WithinAbs(1.1, 1e-15));

  Eigen::VectorXd bad_count = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
  REQUIRE_THROWS_AS(rd_marginal(constant, bad_count), Error);
  Eigen::VectorXd negative(2);
  negative << -0.25, 1.25;
  REQUIRE_THROWS_AS(rd_marginal(constant, negative), Error);
  Eigen::VectorXd not_normalized(2);
  not_normalized << 0.25, 0.25;
  REQUIRE_THROWS_AS(rd_marginal(constant, not_normalized), Error);
  std::vector<std::vector<double>> ragged{{0.8, 0.8}, {1.2}};
  REQUIRE_THROWS_AS(rd_marginal(ragged, w3), Error);
}

TEST_CASE("percent reduction contrasts disparity and residual-disparity draws", "[rd]") {
  std::vector<double> disp(30, 0.83);
  auto zero = percent_reduction(disp, disp);
  REQUIRE(zero.point == 0.0);
  REQUIRE(zero.lower == 0.0);
  REQUIRE(zero.upper == 0.0);

  std::vector<double> rd(30, 0.86);
  auto neg = percent_reduction(disp, rd);
  REQUIRE_THAT(neg.point, Catch::Matchers::WithinAbs((0.83 - 0.86) / 0.83, 1e-14));
  REQUIRE_THAT(neg.point, Catch::Matchers::WithinAbs(-0.0361, 5e-5));

  std::vector<double> eliminated(30, 0.0);
  REQUIRE(percent_reduction(disp, eliminated).point == 1.0);

  std::vector<double> nonpos(30, 0.0);
  REQUIRE_THROWS_AS(percent_reduction(nonpos, rd), Error);
  std::vector<double> shorter(29, 0.83);
  REQUIRE_THROWS_AS(percent_reduction(shorter, rd), Error);
}

TEST_CASE("interaction-free outcome draws cancel exactly", "[rd]") {
  auto grid = fixed_mixture_grid({{1.0, 27.0, 3.5}}, 24, 10.0, 44.0, 300);
  Eigen::VectorXd theta(4);
  theta << 8.0, -0.88, 0.029, 0.0;
  auto aft = fixed_aft_draws(linear_interaction_spec(), theta, 0.82, 24);
  CovariateStratum all;
  auto rd = rd_conditional(grid, aft, all, 50, 7);
  REQUIRE(rd.size() == 24);
  for (double r : rd) REQUIRE(r == std::exp(-0.88));
}

TEST_CASE("residual disparity hits the normal and mixture integral oracles", "[rd][slow]") {
  Eigen::VectorXd theta(4);
  theta << 8.0, -0.88, 0.029, 0.022;
  auto aft = fixed_aft_draws(linear_interaction_spec(), theta, 0.82, 40);
  CovariateStratum all;

  SECTION("single normal target: moment-generating-function value") {
    auto grid = fixed_mixture_grid({{1.0, 27.0, 3.5}}, 40, 27.0 - 9 * 3.5, 27.0 + 9 * 3.5, 2500);
    auto rd = rd_conditional(grid, aft, all, 20000, 11);
    double closed = std::exp(-0.88 + 0.022 * 27.0 +
                             (0.051 * 0.051 - 0.029 * 0.029) * 3.5 * 3.5 / 2.0);
    REQUIRE_THAT(mean_of(rd), Catch::Matchers::WithinAbs(closed, 2e-3));
  }

  SECTION("trinomial target: quadrature oracle") {
    std::vector<MixComp> tri{{0.4, 23.0, 1.5}, {0.35, 28.0, 1.5}, {0.25, 32.0, 1.5}};
    auto grid = fixed_mixture_grid(tri, 40, 8.0, 47.0, 2500);
    auto rd = rd_conditional(grid, aft, all, 20000, 13);

    auto mgf = [&](double t) {
      double v = 0.0;
      for (const auto& c : tri) v += c.w * std::exp(t * c.mu + 0.5 * t * t * c.sd * c.sd);
      return v;
    };
    double closed = std::exp(-0.88) * mgf(0.051) / mgf(0.029);
    auto integrand = [&](double t) {
      return [&, t](double m) {
        double f = 0.0;
        for (const auto& c : tri) f += c.w * normal_pdf(m, c.mu, c.sd);
        return std::exp(t * m) * f;
      };
    };
    double quad = std::exp(-0.88) * adaptive_simpson(integrand(0.051), 8.0, 47.0, 1e-12) /
                  adaptive_simpson(integrand(0.029), 8.0, 47.0, 1e-12);
    REQUIRE_THAT(quad, Catch::Matchers::WithinRel(closed, 1e-8));
    REQUIRE_THAT(mean_of(rd), Catch::Matchers::WithinAbs(quad, 3e-3));
  }
}

TEST_CASE("the outcome intercept and scale never reach the ratio", "[rd]") {
  auto grid = fixed_mixture_grid({{1.0, 27.0, 3.5}}, 16, 10.0, 44.0, 400);
  Eigen::VectorXd theta(4);
  theta << 8.0, -0.88, 0.029, 0.022;
  auto aft = fixed_aft_draws(linear_interaction_spec(), theta, 0.82, 16);
  CovariateStratum all;
  auto rd = rd_conditional(grid, aft, all, 200, 3);

  AftFit shifted = aft;
  shifted.draws.col(0).array() += 7.5;           // intercept column
  shifted.draws.col(4).setConstant(123.456);     // scale column
  auto rd_shifted = rd_conditional(grid, shifted, all, 200, 3);
  for (std::size_t t = 0; t < rd.size(); ++t) REQUIRE(rd[t] == rd_shifted[t]);
}

TEST_CASE("shifting the whole target law multiplies the ratio by the interaction factor",
          "[rd]") {
  Eigen::VectorXd theta(4);
  theta << 8.0, -0.88, 0.029, 0.022;
  auto aft = fixed_aft_draws(linear_interaction_spec(), theta, 0.82, 10);
  CovariateStratum all;
  const double delta = 0.5;

  auto grid = fixed_mixture_grid({{1.0, 27.0, 3.5}}, 10, 10.0, 44.0, 3000);
  ConditionalDensityGrid shifted = grid;
  shifted.grid.array() += delta;
  auto rd0 = rd_conditional(grid, aft, all, 40000, 19);
  auto rd1 = rd_conditional(shifted, aft, all, 40000, 19);
  REQUIRE_THAT(mean_of(rd1) / mean_of(rd0), Catch::Matchers::WithinRel(std::exp(0.022 * delta), 1e-3));
}

TEST_CASE("a single-component mixture fit agrees with the linear counterfactual", "[rd][slow]") {
  // same normal law handed to both engines
  DesignMatrixSpec lin_spec;
  lin_spec.group_main = false;
  LinearMediatorFit lin;
  lin.spec = lin_spec;
  lin.layout = ColumnLayout::build(lin_spec);
  lin.coef = Eigen::VectorXd::Constant(1, 26.4);
  lin.resid_sd = 3.1;

  LddpFit mix;
  mix.spec = lin_spec;
  mix.layout = lin.layout;
  LddpDraw d;
  d.beta = Eigen::MatrixXd::Constant(1, 1, 26.4);
  d.sigma2 = Eigen::VectorXd::Constant(1, 3.1 * 3.1);
  d.weight = Eigen::VectorXd::Constant(1, 1.0);
  for (int t = 0; t < 20; ++t) mix.draws.push_back(d);

  Eigen::VectorXd theta(4);
  theta << 8.0, -0.88, 0.029, 0.022;
  auto aft = fixed_aft_draws(linear_interaction_spec(), theta, 0.82, 20);
  CovariateStratum all;

  Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(3000, 26.4 - 9 * 3.1, 26.4 + 9 * 3.1);
  auto dens = eval_density(mix, all, grid);
  auto rd_mix = rd_conditional(dens, aft, all, 50000, 23);
  double rd_lin = rd_linear_counterfactual(lin, aft, all, 1000000, 29);
  REQUIRE_THAT(mean_of(rd_mix), Catch::Matchers::WithinAbs(rd_lin, 3e-3));
}

TEST_CASE("residual-disparity draws are deterministic and validated", "[rd]") {
  auto grid = fixed_mixture_grid({{1.0, 27.0, 3.5}}, 8, 10.0, 44.0, 300);
  Eigen::VectorXd theta(4);
  theta << 8.0, -0.88, 0.029, 0.022;
  auto aft = fixed_aft_draws(linear_interaction_spec(), theta, 0.82, 8);
  CovariateStratum all;

  auto a = rd_conditional(grid, aft, all, 500, 77, 1);
  auto b = rd_conditional(grid, aft, all, 500, 77, 3);
  REQUIRE(a == b);  // thread count cannot change results
  for (double r : a) REQUIRE(r > 0.0);

  auto short_aft = fixed_aft_draws(linear_interaction_spec(), theta, 0.82, 7);
  REQUIRE_THROWS_AS(rd_conditional(grid, short_aft, all, 500, 77), Error);
  REQUIRE_THROWS_AS(rd_conditional(grid, aft, all, 0, 77), Error);
  AftFit no_draws = aft;
  no_draws.draws.resize(0, 5);
  REQUIRE_THROWS_AS(rd_conditional(grid, no_draws, all, 500, 77), Error);
}

TEST_CASE("stratum weights count the chosen population", "[rd]") {
  FactorSchema schema;
  schema.factors.push_back({"sex", {"f", "m"}});
  std::vector<SubjectRecord> recs;
  auto add = [&](int group, int sex, int n) {
    for (int i = 0; i < n; ++i) {
      SubjectRecord r;
      r.group = group;
      r.covariates = {sex};
      recs.push_back(r);
    }
  };
  add(1, 0, 30);
  add(1, 1, 10);
  add(0, 0, 5);
  add(0, 1, 15);

  auto w1 = stratum_weights(recs, schema);  // group 1 by default
  REQUIRE_THAT(w1(0), Catch::Matchers::WithinAbs(0.75, 1e-15));
  REQUIRE_THAT(w1(1), Catch::Matchers::WithinAbs(0.25, 1e-15));
  auto w0 = stratum_weights(recs, schema, WeightPopulation::group0);
  REQUIRE_THAT(w0(0), Catch::Matchers::WithinAbs(0.25, 1e-15));
  auto wp = stratum_weights(recs, schema, WeightPopulation::pooled);
  REQUIRE_THAT(wp(0), Catch::Matchers::WithinAbs(35.0 / 60.0, 1e-15));
  REQUIRE_THAT(wp.sum(), Catch::Matchers::WithinAbs(1.0, 1e-15));

  std::vector<SubjectRecord> only_zero(recs.begin() + 40, recs.end());
  REQUIRE_THROWS_AS(stratum_weights(only_zero, schema), Error);
}
