#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "densmed/aft.hpp"
#include "densmed/core.hpp"
#include "densmed/lddp.hpp"
#include "densmed/math.hpp"
#include "densmed/rng.hpp"
#include "densmed/util.hpp"

namespace densmed {

// Mean of the draws with equal-tailed empirical quantile bounds.
inline IntervalSummary interval_summary(std::span<const double> draws, double level = 0.95,
                                        IntervalKind kind = IntervalKind::credible) {
  require(!draws.empty(), "interval_summary: no draws");
  require(level > 0.0 && level < 1.0, "interval_summary: level must be in (0, 1)");
  IntervalSummary s;
  s.point = mean_of(draws);
  std::vector<double> v(draws.begin(), draws.end());
  s.lower = quantile_type7(v, 0.5 * (1.0 - level));
  s.upper = quantile_type7(std::move(v), 1.0 - 0.5 * (1.0 - level));
  s.level = level;
  s.kind = kind;
  return s;
}

// Residual disparity draws for one covariate stratum: iteration t of the
// mediator-density posterior pairs with draw t of the outcome posterior.
// Within an iteration, n_draws mediator values are sampled from the fitted
// target-group conditional law by inverse-CDF and the two integrands share
// them, so interaction-free coefficients cancel exactly. The outcome
// intercept and scale never enter.
inline std::vector<double> rd_conditional(const ConditionalDensityGrid& density,
                                          const AftFit& aft, const CovariateStratum& stratum,
                                          int n_draws = 1000, std::uint64_t seed = 1,
                                          int threads = 1) {
  require(n_draws > 0, "rd_conditional: n_draws must be positive");
  require(aft.draws.rows() > 0, "rd_conditional: outcome fit has no draws");
  require(density.density.rows() == aft.draws.rows(),
          "rd_conditional: mediator and outcome posteriors have different draw counts");
  const int p = aft.layout.n_cols;
  require(aft.draws.cols() == p + 1, "rd_conditional: outcome draw matrix has wrong width");
  const int q = aft.spec.basis.term_count();
  const std::size_t t_n = static_cast<std::size_t>(aft.draws.rows());
  const std::vector<double> grid(density.grid.data(), density.grid.data() + density.grid.size());

  std::vector<double> rd(t_n);
  parallel_for(t_n, threads, [&](std::size_t t) {
    Eigen::VectorXd theta = aft.draws.row(static_cast<Eigen::Index>(t)).head(p).transpose();
    auto blk = mediator_effect_blocks(aft.spec, aft.layout, theta, stratum.levels);
    std::vector<double> cdf_row(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g)
      cdf_row[g] = density.cdf(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(g));
    Rng rng(substream(seed, {0x4dd0u, static_cast<std::uint64_t>(stratum.index), t}));
    std::vector<double> lnum(static_cast<std::size_t>(n_draws)), lden(lnum.size());
    for (int s = 0; s < n_draws; ++s) {
      double m = inverse_cdf_sample(grid, cdf_row, rng.uniform());
      double a = 0.0, b = 0.0;
      for (int j = 0; j < q; ++j) {
        double term = blk.basis.term(m, j);
        a += blk.num_coef(j) * term;
        b += blk.den_coef(j) * term;
      }
      if (!std::isfinite(a) || !std::isfinite(b))
        fail("rd_conditional: integrand overflow at mediator " + format_double(m) +
             " (iteration " + std::to_string(t) + ")");
      lnum[static_cast<std::size_t>(s)] = a;
      lden[static_cast<std::size_t>(s)] = b;
    }
    rd[t] = std::exp(blk.shift + log_mean_exp(lnum) - log_mean_exp(lden));
  });
  return rd;
}

// Empirical stratum frequencies in the chosen reference population.
enum class WeightPopulation { group1, group0, pooled };

inline Eigen::VectorXd stratum_weights(std::span<const SubjectRecord> records,
                                       const FactorSchema& schema,
                                       WeightPopulation pop = WeightPopulation::group1) {
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(schema.n_strata());
  double total = 0.0;
  for (const auto& r : records) {
    if (pop == WeightPopulation::group1 && r.group != 1) continue;
    if (pop == WeightPopulation::group0 && r.group != 0) continue;
    counts(stratum_index(r.covariates, schema)) += 1.0;
    total += 1.0;
  }
  require(total > 0.0, "stratum_weights: no records in the weighting population");
  return counts / total;
}

// Marginal RD draw t = sum_c weight_c RD_t(c).
inline std::vector<double> rd_marginal(std::span<const std::vector<double>> stratum_draws,
                                       const Eigen::VectorXd& weights) {
  require(stratum_draws.size() == static_cast<std::size_t>(weights.size()),
          "rd_marginal: stratum and weight counts differ");
  require(!stratum_draws.empty(), "rd_marginal: no strata");
  require(weights.minCoeff() >= 0.0, "rd_marginal: weights must be nonnegative");
  require(std::abs(weights.sum() - 1.0) <= 1e-8, "rd_marginal: weights must sum to 1");
  const std::size_t t_n = stratum_draws.front().size();
  for (const auto& d : stratum_draws)
    require(d.size() == t_n, "rd_marginal: stratum draw vectors have different lengths");
  std::vector<double> out(t_n, 0.0);
  for (std::size_t c = 0; c < stratum_draws.size(); ++c)
    for (std::size_t t = 0; t < t_n; ++t) out[t] += weights(static_cast<Eigen::Index>(c)) * stratum_draws[c][t];
  return out;
}

// Per paired draw: (disparity - RD) / disparity, then summarized.
inline IntervalSummary percent_reduction(std::span<const double> disparity_draws,
                                         std::span<const double> rd_draws,
                                         IntervalKind kind = IntervalKind::credible) {
  require(disparity_draws.size() == rd_draws.size(),
          "percent_reduction: disparity and RD draw counts differ");
  require(!disparity_draws.empty(), "percent_reduction: no draws");
  std::vector<double> pr(disparity_draws.size());
  for (std::size_t t = 0; t < pr.size(); ++t) {
    require(disparity_draws[t] > 0.0, "percent_reduction: disparity draws must be positive");
    pr[t] = (disparity_draws[t] - rd_draws[t]) / disparity_draws[t];
  }
  return interval_summary(pr, 0.95, kind);
}

// Everything the analysis pipeline reports about residual disparity.
struct RdResult {
  std::vector<CovariateStratum> strata;
  std::vector<std::vector<double>> stratum_draws;   // RD draws per stratum
  std::vector<IntervalSummary> stratum_summary;
  Eigen::VectorXd weights;                          // marginalization weights
  std::vector<double> marginal_draws;
  IntervalSummary marginal_summary;
  std::vector<IntervalSummary> disparity;           // per stratum
  std::vector<IntervalSummary> reduction;           // percent reduction per stratum
};

}  // namespace densmed
