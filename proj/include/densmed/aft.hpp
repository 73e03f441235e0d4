#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/QR>
#include <boost/math/special_functions/gamma.hpp>

#include "densmed/core.hpp"
#include "densmed/math.hpp"
#include "densmed/rng.hpp"
#include "densmed/util.hpp"

namespace densmed {

// Weibull accelerated failure time model: log T = x' theta + nu * eps with
// eps following the minimum extreme value law, survival exp(-e^eps).
using AftModelSpec = DesignMatrixSpec;

enum class FitKind { mle, bootstrap, bayes };

struct AftFit {
  AftModelSpec spec;
  ColumnLayout layout;
  Eigen::VectorXd theta;
  double nu = 1.0;
  double loglik = 0.0;
  Eigen::MatrixXd covariance;  // observed-information or posterior scale on (theta, log nu)
  bool converged = false;
  int n = 0;
  int n_events = 0;
  FitKind kind = FitKind::mle;
  Eigen::MatrixXd draws;  // one row per draw: theta..., nu (empty for plain MLE)
  double accept_rate = 0.0;
};

struct AftSamplerConfig {
  int iterations = 12000;
  int burn_in = 2000;
  int thinning = 5;
  std::uint64_t seed = 1;

  void validate() const {
    require(iterations > burn_in && burn_in >= 0, "AftSamplerConfig: need iterations > burn_in >= 0");
    require(thinning >= 1, "AftSamplerConfig: thinning must be >= 1");
  }

  int retained() const { return (iterations - burn_in) / thinning; }
};

// Independent normal priors on each regression coefficient and on log nu
// (the last slot). A zero scale pins that parameter at its prior mean.
struct AftPrior {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static AftPrior default_for(int p) {
    AftPrior pr;
    pr.mean = Eigen::VectorXd::Zero(p + 1);
    pr.scale = Eigen::VectorXd::Constant(p + 1, 10.0);
    pr.scale(p) = 2.0;
    return pr;
  }
};

namespace detail {

struct AftData {
  Eigen::MatrixXd x;
  Eigen::VectorXd logt;
  Eigen::VectorXd event;
  double sum_event_logt = 0.0;
  int n_events = 0;
};

inline AftData make_aft_data(std::span<const SubjectRecord> records, const AftModelSpec& spec,
                             const ColumnLayout& lay) {
  require(!records.empty(), "aft fit: no records");
  AftData d;
  d.x = design_matrix(records, spec, lay);
  d.logt.resize(records.size());
  d.event.resize(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    d.logt(static_cast<Eigen::Index>(i)) = std::log(records[i].time);
    d.event(static_cast<Eigen::Index>(i)) = records[i].event;
    if (records[i].event) {
      d.sum_event_logt += std::log(records[i].time);
      ++d.n_events;
    }
  }
  require(d.n_events > 0, "aft fit: dataset has no events");
  return d;
}

// phi = (theta, log nu). Fills grad/hess when non-null.
inline double aft_loglik(const AftData& d, const Eigen::VectorXd& phi, Eigen::VectorXd* grad,
                         Eigen::MatrixXd* hess) {
  const int p = static_cast<int>(d.x.cols());
  const double log_nu = phi(p);
  const double nu = std::exp(log_nu);
  Eigen::VectorXd z = (d.logt - d.x * phi.head(p)) / nu;
  Eigen::VectorXd s = z.array().exp();
  double ll = d.event.dot(z) - d.n_events * log_nu - d.sum_event_logt - s.sum();
  if (grad) {
    Eigen::VectorXd w = s - d.event;
    grad->resize(p + 1);
    grad->head(p) = d.x.transpose() * w / nu;
    (*grad)(p) = s.dot(z) - d.event.dot(z) - d.n_events;
  }
  if (hess) {
    hess->resize(p + 1, p + 1);
    Eigen::VectorXd sz = s.cwiseProduct(z);
    hess->topLeftCorner(p, p) = -(d.x.transpose() * s.asDiagonal() * d.x) / (nu * nu);
    Eigen::VectorXd cross = -(d.x.transpose() * (s - d.event) + d.x.transpose() * sz) / nu;
    hess->block(0, p, p, 1) = cross;
    hess->block(p, 0, 1, p) = cross.transpose();
    (*hess)(p, p) = -s.dot(z.cwiseProduct(z)) - sz.sum() + d.event.dot(z);
  }
  return ll;
}

inline Eigen::VectorXd aft_start(const AftData& d) {
  const int p = static_cast<int>(d.x.cols());
  // least squares of log time on the design, events only when possible
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < d.event.size(); ++i)
    if (d.event(i) > 0.5) rows.push_back(i);
  bool use_all = static_cast<int>(rows.size()) < 2 * p;
  Eigen::MatrixXd xs;
  Eigen::VectorXd ys;
  if (use_all) {
    xs = d.x;
    ys = d.logt;
  } else {
    xs.resize(rows.size(), p);
    ys.resize(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      xs.row(static_cast<Eigen::Index>(k)) = d.x.row(rows[k]);
      ys(static_cast<Eigen::Index>(k)) = d.logt(rows[k]);
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
  if (qr.rank() < p && !use_all) {
    // a column can vanish among the events under heavy censoring; fall back to all rows
    xs = d.x;
    ys = d.logt;
    qr.compute(xs);
  }
  if (qr.rank() < p) fail("aft fit: design matrix is rank deficient");
  Eigen::VectorXd phi(p + 1);
  phi.head(p) = qr.solve(ys);
  double rss = (ys - xs * phi.head(p)).squaredNorm();
  double resid_sd = std::sqrt(rss / std::max<double>(1.0, static_cast<double>(ys.size() - p)));
  // sd of the minimum extreme value error is pi / sqrt(6)
  double nu0 = std::max(resid_sd / (M_PI / std::sqrt(6.0)), 0.05);
  phi(p) = std::log(nu0);
  return phi;
}

inline AftFit fit_aft_newton(const AftData& d, const AftModelSpec& spec, const ColumnLayout& lay,
                             int max_iter = 200, double grad_tol = 1e-6) {
  const int p = static_cast<int>(d.x.cols());
  const int k = p + 1;
  Eigen::VectorXd phi = aft_start(d);
  Eigen::VectorXd g(k);
  Eigen::MatrixXd h(k, k);
  double ll = aft_loglik(d, phi, &g, &h);
  bool converged = false;
  for (int it = 0; it < max_iter; ++it) {
    if (g.cwiseAbs().maxCoeff() < grad_tol) {
      converged = true;
      break;
    }
    Eigen::MatrixXd neg_h = -h;
    double ridge = 0.0;
    Eigen::VectorXd step;
    while (true) {
      Eigen::LDLT<Eigen::MatrixXd> ldlt(neg_h + ridge * Eigen::MatrixXd::Identity(k, k));
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        step = ldlt.solve(g);
        if (step.dot(g) > 0.0) break;
      }
      ridge = ridge == 0.0 ? 1e-6 * (1.0 + neg_h.diagonal().cwiseAbs().maxCoeff()) : ridge * 10.0;
      if (!std::isfinite(ridge) || ridge > 1e12) fail("aft fit: cannot stabilize Newton step");
    }
    double t = 1.0;
    double slope = step.dot(g);
    // sufficient-decrease test padded by the rounding noise floor of ll
    double noise = 1e-11 * (1.0 + std::abs(ll));
    bool moved = false;
    for (int halving = 0; halving < 60; ++halving) {
      Eigen::VectorXd cand = phi + t * step;
      double ll_cand = aft_loglik(d, cand, nullptr, nullptr);
      if (std::isfinite(ll_cand) && ll_cand >= ll + 1e-4 * t * slope - noise) {
        phi = cand;
        ll = aft_loglik(d, phi, &g, &h);
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;
  }
  AftFit fit;
  fit.spec = spec;
  fit.layout = lay;
  fit.theta = phi.head(p);
  fit.nu = std::exp(phi(p));
  fit.loglik = ll;
  fit.converged = converged;
  fit.n = static_cast<int>(d.x.rows());
  fit.n_events = d.n_events;
  Eigen::LDLT<Eigen::MatrixXd> obs(-h);
  if (obs.info() == Eigen::Success && obs.isPositive())
    fit.covariance = obs.solve(Eigen::MatrixXd::Identity(k, k));
  else
    fit.covariance = Eigen::MatrixXd::Zero(k, k);
  return fit;
}

}  // namespace detail

inline AftFit fit_aft_mle(std::span<const SubjectRecord> records, const AftModelSpec& spec,
                          int max_iter = 200) {
  auto lay = ColumnLayout::build(spec);
  auto d = detail::make_aft_data(records, spec, lay);
  return detail::fit_aft_newton(d, spec, lay, max_iter);
}

inline AftFit fit_aft_bootstrap(std::span<const SubjectRecord> records, const AftModelSpec& spec,
                                int n_boot, std::uint64_t seed, int threads = 0) {
  require(n_boot > 0, "fit_aft_bootstrap: n_boot must be positive");
  AftFit base = fit_aft_mle(records, spec);
  require(base.converged, "fit_aft_bootstrap: base fit did not converge");
  const int p = static_cast<int>(base.theta.size());
  base.draws.resize(n_boot, p + 1);
  const std::size_t n = records.size();
  parallel_for(static_cast<std::size_t>(n_boot), threads, [&](std::size_t b) {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 20) fail("fit_aft_bootstrap: replicate failed to converge");
      Rng rng(substream(seed, {0xb007u, b, static_cast<std::uint64_t>(attempt)}));
      std::vector<SubjectRecord> sample;
      sample.reserve(n);
      for (std::size_t i = 0; i < n; ++i)
        sample.push_back(records[static_cast<std::size_t>(rng.uniform() * static_cast<double>(n))]);
      try {
        AftFit f = fit_aft_mle(sample, spec);
        if (!f.converged) continue;
        base.draws.row(static_cast<Eigen::Index>(b)).head(p) = f.theta.transpose();
        base.draws(static_cast<Eigen::Index>(b), p) = f.nu;
        return;
      } catch (const Error&) {
        continue;
      }
    }
  });
  base.kind = FitKind::bootstrap;
  return base;
}

// Random-walk Metropolis on (theta, log nu), proposal shaped by the inverse
// observed information at the mode, global scale adapted during burn-in.
inline AftFit fit_aft_bayes(std::span<const SubjectRecord> records, const AftModelSpec& spec,
                            const AftPrior& prior, const AftSamplerConfig& cfg) {
  cfg.validate();
  auto lay = ColumnLayout::build(spec);
  auto d = detail::make_aft_data(records, spec, lay);
  const int p = lay.n_cols;
  const int k = p + 1;
  require(prior.mean.size() == k && prior.scale.size() == k,
          "fit_aft_bayes: prior must have one entry per coefficient plus log nu");
  for (int i = 0; i < k; ++i)
    require(prior.scale(i) >= 0.0, "fit_aft_bayes: prior scales must be nonnegative");

  std::vector<int> free_idx;
  for (int i = 0; i < k; ++i)
    if (prior.scale(i) > 0.0) free_idx.push_back(i);
  require(!free_idx.empty(), "fit_aft_bayes: all parameters are pinned");
  const int kf = static_cast<int>(free_idx.size());

  AftFit mode = detail::fit_aft_newton(d, spec, lay);
  Eigen::VectorXd phi(k);
  phi.head(p) = mode.theta;
  phi(p) = std::log(mode.nu);
  for (int i = 0; i < k; ++i)
    if (prior.scale(i) == 0.0) phi(i) = prior.mean(i);

  Eigen::MatrixXd prop_cov(kf, kf);
  for (int a = 0; a < kf; ++a)
    for (int b = 0; b < kf; ++b) prop_cov(a, b) = mode.covariance(free_idx[a], free_idx[b]);
  if (!(prop_cov.diagonal().minCoeff() > 0.0))
    prop_cov = Eigen::MatrixXd::Identity(kf, kf) * 1e-2;
  prop_cov *= 2.38 * 2.38 / kf;
  Eigen::LLT<Eigen::MatrixXd> llt(prop_cov);
  Eigen::MatrixXd prop_chol = llt.info() == Eigen::Success
                                  ? Eigen::MatrixXd(llt.matrixL())
                                  : Eigen::MatrixXd(Eigen::MatrixXd::Identity(kf, kf) * 0.05);

  auto log_post = [&](const Eigen::VectorXd& ph) {
    double lp = detail::aft_loglik(d, ph, nullptr, nullptr);
    for (int i : free_idx) lp += normal_logpdf(ph(i), prior.mean(i), prior.scale(i));
    return lp;
  };

  Rng rng(substream(cfg.seed, {0xafabu}));
  double lp = log_post(phi);
  double log_lambda = 0.0;
  int batch_acc = 0, batch_n = 0;
  long total_acc = 0;
  const int n_keep = cfg.retained();
  Eigen::MatrixXd draws(n_keep, k);
  Eigen::MatrixXd phi_draws(n_keep, k);
  int kept = 0;

  for (int it = 0; it < cfg.iterations; ++it) {
    Eigen::VectorXd zf(kf);
    for (int j = 0; j < kf; ++j) zf(j) = rng.normal();
    Eigen::VectorXd stepf = std::exp(log_lambda) * (prop_chol * zf);
    Eigen::VectorXd cand = phi;
    for (int j = 0; j < kf; ++j) cand(free_idx[j]) += stepf(j);
    double lp_cand = log_post(cand);
    if (std::isfinite(lp_cand) && std::log(rng.uniform()) < lp_cand - lp) {
      phi = cand;
      lp = lp_cand;
      ++batch_acc;
      ++total_acc;
    }
    ++batch_n;
    if (it < cfg.burn_in && batch_n == 50) {
      double rate = static_cast<double>(batch_acc) / batch_n;
      log_lambda += (rate - 0.3);
      log_lambda = std::clamp(log_lambda, -8.0, 4.0);
      batch_acc = 0;
      batch_n = 0;
    }
    if (it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thinning == 0 && kept < n_keep) {
      phi_draws.row(kept) = phi.transpose();
      draws.row(kept).head(p) = phi.head(p).transpose();
      draws(kept, p) = std::exp(phi(p));
      ++kept;
    }
  }

  AftFit fit;
  fit.spec = spec;
  fit.layout = lay;
  Eigen::VectorXd post_mean = phi_draws.topRows(kept).colwise().mean();
  fit.theta = post_mean.head(p);
  fit.nu = std::exp(post_mean(p));
  fit.loglik = detail::aft_loglik(d, post_mean, nullptr, nullptr);
  Eigen::MatrixXd centered = phi_draws.topRows(kept).rowwise() - post_mean.transpose();
  fit.covariance = centered.transpose() * centered / std::max(1, kept - 1);
  fit.converged = true;
  fit.n = static_cast<int>(d.x.rows());
  fit.n_events = d.n_events;
  fit.kind = FitKind::bayes;
  fit.draws = draws.topRows(kept);
  fit.accept_rate = static_cast<double>(total_acc) / cfg.iterations;
  return fit;
}

// Group-versus-reference survival time ratio exp(theta_group + theta_gc' c)
// within a covariate stratum. The fit must not contain mediator terms.
inline double disparity_point(const AftFit& fit, const std::vector<int>& stratum_levels) {
  require(fit.spec.basis.kind == MediatorBasis::Kind::none,
          "disparity: model must not contain mediator terms");
  require(fit.layout.group_col >= 0, "disparity: model has no group effect");
  Eigen::RowVectorXd diff = expand_design(1, 0.0, stratum_levels, fit.spec, fit.layout) -
                            expand_design(0, 0.0, stratum_levels, fit.spec, fit.layout);
  return std::exp(diff.dot(fit.theta));
}

inline std::vector<double> disparity_draws(const AftFit& fit, const std::vector<int>& stratum_levels);

// Point estimate plus an interval from the 2.5% and 97.5% quantiles of the
// fit's draws (bootstrap replicates or posterior samples).
inline IntervalSummary disparity(const AftFit& fit, const std::vector<int>& stratum_levels) {
  auto draws = disparity_draws(fit, stratum_levels);
  IntervalSummary s;
  s.point = disparity_point(fit, stratum_levels);
  s.lower = quantile_type7(draws, 0.025);
  s.upper = quantile_type7(draws, 0.975);
  s.kind = fit.kind == FitKind::bayes ? IntervalKind::credible : IntervalKind::bootstrap;
  return s;
}

inline std::vector<double> disparity_draws(const AftFit& fit, const std::vector<int>& stratum_levels) {
  require(fit.draws.rows() > 0, "disparity_draws: fit has no draws");
  require(fit.spec.basis.kind == MediatorBasis::Kind::none,
          "disparity: model must not contain mediator terms");
  Eigen::RowVectorXd diff = expand_design(1, 0.0, stratum_levels, fit.spec, fit.layout) -
                            expand_design(0, 0.0, stratum_levels, fit.spec, fit.layout);
  const int p = static_cast<int>(fit.theta.size());
  std::vector<double> out(static_cast<std::size_t>(fit.draws.rows()));
  for (Eigen::Index b = 0; b < fit.draws.rows(); ++b)
    out[static_cast<std::size_t>(b)] = std::exp(diff.dot(fit.draws.row(b).head(p)));
  return out;
}

// E[T | x] = exp(x' theta) * Gamma(1 + nu).
inline double expected_survival(const Eigen::RowVectorXd& x, const Eigen::VectorXd& theta,
                                double nu) {
  require(x.size() == theta.size(), "expected_survival: dimension mismatch");
  return std::exp(x.dot(theta)) * std::tgamma(1.0 + nu);
}

inline double expected_survival(const AftFit& fit, const Eigen::RowVectorXd& x) {
  return expected_survival(x, fit.theta, fit.nu);
}

// Coefficient blocks that drive the residual-disparity ratio at one covariate
// pattern: the group shift and mediator-term exponents with (num) and without
// (den) the group interaction. The intercept and scale cancel in the ratio and
// are never consulted; num_coef equals den_coef bitwise when the interaction
// coefficients are exactly zero.
struct MediatorEffectBlocks {
  double shift = 0.0;        // group main + group:covariate dummies at c
  Eigen::VectorXd den_coef;  // per mediator term j: med_j + med_j:covariate dummies at c
  Eigen::VectorXd num_coef;  // den_coef(j) + group:med_j
  MediatorBasis basis;
};

inline MediatorEffectBlocks mediator_effect_blocks(const DesignMatrixSpec& spec,
                                                   const ColumnLayout& lay,
                                                   const Eigen::VectorXd& theta,
                                                   const std::vector<int>& levels) {
  require(lay.group_col >= 0, "mediator_effect_blocks: model has no group term");
  require(theta.size() >= lay.n_cols, "mediator_effect_blocks: coefficient vector too short");
  const int nf = spec.schema.n_factors();
  require(static_cast<int>(levels.size()) == nf,
          "mediator_effect_blocks: covariate count mismatch");
  MediatorEffectBlocks b;
  b.basis = spec.basis;
  b.shift = theta(lay.group_col);
  for (int f = 0; f < nf; ++f) {
    int lvl = levels[f];
    require(lvl >= 0 && lvl < static_cast<int>(spec.schema.factors[f].levels.size()),
            "mediator_effect_blocks: covariate level out of range");
    if (lvl > 0 && lay.group_cov_first[f] >= 0) b.shift += theta(lay.group_cov_first[f] + lvl - 1);
  }
  b.den_coef.resize(lay.q);
  b.num_coef.resize(lay.q);
  for (int j = 0; j < lay.q; ++j) {
    double d = theta(lay.med_first + j);
    for (int f = 0; f < nf; ++f) {
      if (levels[f] > 0 && lay.med_cov_first[j][f] >= 0)
        d += theta(lay.med_cov_first[j][f] + levels[f] - 1);
    }
    b.den_coef(j) = d;
    b.num_coef(j) = lay.group_med_first >= 0 ? d + theta(lay.group_med_first + j) : d;
  }
  return b;
}

inline MediatorEffectBlocks mediator_effect_blocks(const AftFit& fit,
                                                   const std::vector<int>& levels) {
  return mediator_effect_blocks(fit.spec, fit.layout, fit.theta, levels);
}

struct LrtResult {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  double loglik_full = 0.0;
  double loglik_nested = 0.0;
};

inline LrtResult lrt_compare(const AftFit& full, const AftFit& nested) {
  require(full.n == nested.n && full.n_events == nested.n_events,
          "lrt_compare: fits are not on the same data");
  require(full.converged && nested.converged, "lrt_compare: both fits must have converged");
  for (const auto& name : nested.layout.names)
    require(std::find(full.layout.names.begin(), full.layout.names.end(), name) !=
                full.layout.names.end(),
            "lrt_compare: nested model has column '" + name + "' absent from the full model");
  int df = full.layout.n_cols - nested.layout.n_cols;
  double stat = 2.0 * (full.loglik - nested.loglik);
  require(stat > -1e-6, "lrt_compare: nested model fits better; models are not nested");
  stat = std::max(0.0, stat);
  LrtResult r;
  r.statistic = stat;
  r.df = df;
  r.p_value = df == 0 ? 1.0 : boost::math::gamma_q(0.5 * df, 0.5 * stat);
  r.loglik_full = full.loglik;
  r.loglik_nested = nested.loglik;
  return r;
}

}  // namespace densmed
