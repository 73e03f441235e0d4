#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "densmed/aft.hpp"
#include "densmed/core.hpp"
#include "densmed/math.hpp"
#include "densmed/rng.hpp"
#include "densmed/util.hpp"

namespace densmed {

// Clinical BMI categories with underweight merged into the baseline:
// 0 = normal (< 25), 1 = overweight, 2 = class I obese, 3 = class II/III obese.
inline const std::vector<double>& bmi_cutpoints() {
  static const std::vector<double> c{25.0, 30.0, 35.0};
  return c;
}

inline int categorize_bmi(double m) {
  require(m > 0.0, "categorize_bmi: BMI must be positive");
  return categorize(m, bmi_cutpoints());
}

// Normal linear model for the mediator, M = x' b + Normal(0, sd^2), fitted by
// least squares on the same design conventions as every other model here.
struct LinearMediatorFit {
  DesignMatrixSpec spec;
  ColumnLayout layout;
  Eigen::VectorXd coef;
  double resid_sd = 1.0;
  Eigen::MatrixXd boot_coef;  // n_boot x p, empty unless bootstrapped
  Eigen::VectorXd boot_sd;
};

inline LinearMediatorFit fit_linear_mediator(std::span<const SubjectRecord> records,
                                             const DesignMatrixSpec& spec, int n_boot = 0,
                                             std::uint64_t seed = 1) {
  require(spec.basis.kind == MediatorBasis::Kind::none,
          "fit_linear_mediator: the mediator is the response; remove mediator terms");
  LinearMediatorFit fit;
  fit.spec = spec;
  fit.layout = ColumnLayout::build(spec);
  const int p = fit.layout.n_cols;
  require(static_cast<int>(records.size()) > p,
          "fit_linear_mediator: need more records than design columns");

  auto solve = [&](std::span<const SubjectRecord> recs, Eigen::VectorXd& coef, double& sd) {
    Eigen::MatrixXd x = design_matrix(recs, spec, fit.layout);
    Eigen::VectorXd y(recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i)
      y(static_cast<Eigen::Index>(i)) = recs[i].mediator;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    require(qr.rank() == p, "fit_linear_mediator: design matrix is rank deficient");
    coef = qr.solve(y);
    double rss = (y - x * coef).squaredNorm();
    sd = std::sqrt(rss / (static_cast<double>(recs.size()) - p));
    require(sd > 0.0, "fit_linear_mediator: residual standard deviation is zero");
  };
  solve(records, fit.coef, fit.resid_sd);

  if (n_boot > 0) {
    fit.boot_coef.resize(n_boot, p);
    fit.boot_sd.resize(n_boot);
    const std::size_t n = records.size();
    std::vector<SubjectRecord> sample(n);
    for (int b = 0; b < n_boot; ++b) {
      Rng rng(substream(seed, {0x11f1u, static_cast<std::uint64_t>(b)}));
      for (std::size_t i = 0; i < n; ++i)
        sample[i] = records[static_cast<std::size_t>(rng.uniform() * static_cast<double>(n))];
      Eigen::VectorXd coef;
      double sd = 0.0;
      solve(sample, coef, sd);
      fit.boot_coef.row(b) = coef.transpose();
      fit.boot_sd(b) = sd;
    }
  }
  return fit;
}

// Baseline-category logit over the mediator categories defined by `cutpoints`:
//   P(cat = k | x) = exp(x' gamma_k) / (1 + sum_l exp(x' gamma_l)),  gamma_0 = 0.
struct BclFit {
  DesignMatrixSpec spec;
  ColumnLayout layout;
  std::vector<double> cutpoints;
  Eigen::MatrixXd gamma;  // K x p; row k-1 compares category k against baseline 0
  double loglik = 0.0;
  int iterations = 0;
};

inline BclFit fit_bcl(std::span<const SubjectRecord> records, std::vector<double> cutpoints,
                      const DesignMatrixSpec& spec, int max_iter = 100) {
  require(spec.basis.kind == MediatorBasis::Kind::none,
          "fit_bcl: the category is the response; remove mediator terms from the design");
  require(!cutpoints.empty() && std::is_sorted(cutpoints.begin(), cutpoints.end()),
          "fit_bcl: cutpoints must be nonempty and increasing");
  BclFit fit;
  fit.spec = spec;
  fit.layout = ColumnLayout::build(spec);
  fit.cutpoints = std::move(cutpoints);
  const int p = fit.layout.n_cols;
  const int k_n = static_cast<int>(fit.cutpoints.size());
  const Eigen::Index n = static_cast<Eigen::Index>(records.size());
  require(n > 0, "fit_bcl: no records");

  Eigen::MatrixXd x = design_matrix(records, spec, fit.layout);
  std::vector<int> cat(records.size());
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(k_n + 1);
  for (std::size_t i = 0; i < records.size(); ++i) {
    cat[i] = categorize(records[i].mediator, fit.cutpoints);
    ++counts(cat[i]);
  }
  for (int k = 0; k <= k_n; ++k)
    require(counts(k) > 0, "fit_bcl: mediator category " + std::to_string(k) +
                               " has no observations; coefficients would diverge");

  // Newton iterations on the stacked coefficient vector (category-major).
  const int dim = k_n * p;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
  std::vector<double> le(static_cast<std::size_t>(k_n) + 1);
  double ll = -std::numeric_limits<double>::infinity();
  auto loglik = [&](const Eigen::VectorXd& coefs, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
    double out = 0.0;
    if (grad) grad->setZero(dim);
    if (hess) hess->setZero(dim, dim);
    Eigen::VectorXd prob(k_n + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      le[0] = 0.0;
      for (int k = 0; k < k_n; ++k) le[static_cast<std::size_t>(k) + 1] = x.row(i).dot(coefs.segment(k * p, p));
      double lse = log_sum_exp(le);
      out += le[static_cast<std::size_t>(cat[i])] - lse;
      if (!grad && !hess) continue;
      for (int k = 0; k <= k_n; ++k) prob(k) = std::exp(le[static_cast<std::size_t>(k)] - lse);
      for (int k = 0; k < k_n; ++k) {
        double resid = (cat[i] == k + 1 ? 1.0 : 0.0) - prob(k + 1);
        if (grad) grad->segment(k * p, p) += resid * x.row(i).transpose();
        if (hess) {
          for (int l = 0; l < k_n; ++l) {
            double w = prob(k + 1) * ((k == l ? 1.0 : 0.0) - prob(l + 1));
            hess->block(k * p, l * p, p, p) -= w * x.row(i).transpose() * x.row(i);
          }
        }
      }
    }
    return out;
  };

  Eigen::VectorXd grad(dim);
  Eigen::MatrixXd hess(dim, dim);
  int it = 0;
  bool converged = false;
  for (; it < max_iter; ++it) {
    ll = loglik(g, &grad, &hess);
    if (grad.cwiseAbs().maxCoeff() < 1e-9) {
      converged = true;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(-hess);
    require(ldlt.info() == Eigen::Success,
            "fit_bcl: information matrix factorization failed (design rank deficient?)");
    Eigen::VectorXd step = ldlt.solve(grad);
    // Newton decrement: quadratic-model gain below double rounding of ll.
    if (grad.dot(step) < 1e-13 * (1.0 + std::abs(ll))) {
      converged = true;
      break;
    }
    double t = 1.0;
    for (int half = 0; half < 40; ++half, t *= 0.5) {
      Eigen::VectorXd cand = g + t * step;
      if (loglik(cand, nullptr, nullptr) >= ll) {
        g = cand;
        break;
      }
    }
    require(g.norm() <= 50.0, "fit_bcl: separation detected (coefficients diverging)");
  }
  require(converged, "fit_bcl: Newton iterations did not converge");
  fit.gamma = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      g.data(), k_n, p);
  fit.loglik = ll;
  fit.iterations = it;
  return fit;
}

// Fitted category probabilities at one design point.
inline Eigen::VectorXd bcl_category_probs(const BclFit& fit, int group,
                                          const std::vector<int>& levels) {
  const int k_n = static_cast<int>(fit.gamma.rows());
  Eigen::RowVectorXd x = expand_design(group, 0.0, levels, fit.spec, fit.layout);
  std::vector<double> le(static_cast<std::size_t>(k_n) + 1);
  le[0] = 0.0;
  for (int k = 0; k < k_n; ++k) le[static_cast<std::size_t>(k) + 1] = x.dot(fit.gamma.row(k));
  double lse = log_sum_exp(le);
  Eigen::VectorXd probs(k_n + 1);
  for (int k = 0; k <= k_n; ++k) probs(k) = std::exp(le[static_cast<std::size_t>(k)] - lse);
  return probs;
}

// Closed-form residual disparity when the outcome model codes the mediator as
// category indicators and the target-group category law is the fitted logit:
//   RD = e^shift * (1 + sum_k e^{l_k + num_k}) / (1 + sum_k e^{l_k + den_k}).
inline double rd_bcl(const BclFit& bcl, const AftFit& aft, const CovariateStratum& stratum) {
  require(aft.spec.basis.kind == MediatorBasis::Kind::categorical,
          "rd_bcl: outcome model must code the mediator as category indicators");
  const int k_n = static_cast<int>(bcl.cutpoints.size());
  require(aft.spec.basis.term_count() == k_n,
          "rd_bcl: category counts differ between mediator and outcome fits");
  auto blk = mediator_effect_blocks(aft, stratum.levels);
  Eigen::RowVectorXd xb = expand_design(0, 0.0, stratum.levels, bcl.spec, bcl.layout);
  std::vector<double> lnum{0.0}, lden{0.0};
  for (int k = 0; k < k_n; ++k) {
    double l = xb.dot(bcl.gamma.row(k));
    lnum.push_back(l + blk.num_coef(k));
    lden.push_back(l + blk.den_coef(k));
  }
  return std::exp(blk.shift + log_sum_exp(lnum) - log_sum_exp(lden));
}

// Monte Carlo residual disparity with the target-group mediator law replaced
// by the fitted normal linear model (group set to its reference level). The
// same draws feed numerator and denominator, so interaction-free models
// cancel exactly.
inline double rd_linear_counterfactual(const LinearMediatorFit& linfit, const AftFit& aft,
                                       const CovariateStratum& stratum, int n_draws,
                                       std::uint64_t seed) {
  require(n_draws > 0, "rd_linear_counterfactual: n_draws must be positive");
  auto blk = mediator_effect_blocks(aft, stratum.levels);
  double mean =
      expand_design(0, 0.0, stratum.levels, linfit.spec, linfit.layout).dot(linfit.coef);
  Rng rng(substream(seed, {0x11d7u, static_cast<std::uint64_t>(stratum.index)}));
  const int q = blk.basis.term_count();
  std::vector<double> lnum(static_cast<std::size_t>(n_draws)), lden(lnum.size());
  for (int t = 0; t < n_draws; ++t) {
    double m = rng.normal(mean, linfit.resid_sd);
    double a = 0.0, b = 0.0;
    for (int j = 0; j < q; ++j) {
      double term = blk.basis.term(m, j);
      a += blk.num_coef(j) * term;
      b += blk.den_coef(j) * term;
    }
    lnum[static_cast<std::size_t>(t)] = a;
    lden[static_cast<std::size_t>(t)] = b;
  }
  return std::exp(blk.shift + log_mean_exp(lnum) - log_mean_exp(lden));
}

// Difference method: adjust for the mediator linearly with no interactions and
// read the group coefficient. `spec` only contributes the covariate factors
// and the mediator centering; everything else is forced to the restricted form.
inline double rd_difference(std::span<const SubjectRecord> records,
                            const DesignMatrixSpec& spec) {
  DesignMatrixSpec restricted = spec;
  restricted.intercept = true;
  restricted.group_main = true;
  restricted.basis = MediatorBasis::polynomial(
      1, spec.basis.kind == MediatorBasis::Kind::polynomial ? spec.basis.centering : 0.0);
  restricted.group_mediator = false;
  restricted.group_covariate_factors.clear();
  restricted.mediator_covariate_factors.clear();
  AftFit fit = fit_aft_mle(records, restricted);
  require(fit.converged, "rd_difference: outcome model did not converge");
  return std::exp(fit.theta(fit.layout.group_col));
}

}  // namespace densmed
