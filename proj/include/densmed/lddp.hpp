#pragma once

#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "densmed/core.hpp"
#include "densmed/math.hpp"
#include "densmed/rng.hpp"
#include "densmed/util.hpp"

#include "json.hpp"

namespace densmed {

// Dirichlet process mixture of linear regressions for the mediator:
//   m | x ~ sum_j w_j Normal(x' beta_j, sigma2_j)
// with stick-breaking weights truncated at H components and a
// normal/inverse-gamma base measure whose own parameters carry hyperpriors.
struct LddpPriors {
  double a0 = 10.0, b0 = 1.0;       // alpha ~ Gamma(a0, b0)
  double tau1 = 6.01;               // sigma^-2_j ~ Gamma(tau1/2, tau2/2)
  double tau_s1 = 6.01, tau_s2 = 2.01;  // tau2 ~ Gamma(tau_s1/2, tau_s2/2)
  double nu_iw = 0.0;               // 0 = automatic: max(9, p + 2)
  double tau2_init = 0.0;           // 0 = automatic: tau_s1 / tau_s2
  Eigen::VectorXd m0;               // empty = least-squares fit of the mediator
  Eigen::MatrixXd s0;               // empty = 1000 (X'X)^-1
  Eigen::MatrixXd psi;              // empty = s0^-1
  bool update_base_measure = true;  // freeze mu_b, S_b, tau2 when false

  void validate() const {
    require(a0 > 0 && b0 > 0 && tau1 > 0 && tau_s1 > 0 && tau_s2 > 0,
            "LddpPriors: scalar hyperparameters must be positive");
  }
};

struct McmcConfig {
  int truncation = 30;
  int iterations = 10000;
  int burn_in = 2000;
  int thinning = 4;
  std::uint64_t seed = 1;

  void validate() const {
    require(truncation >= 2, "McmcConfig: truncation must be >= 2");
    require(iterations > burn_in && burn_in >= 0, "McmcConfig: need iterations > burn_in >= 0");
    require(thinning >= 1, "McmcConfig: thinning must be >= 1");
  }

  int retained() const { return (iterations - burn_in) / thinning; }
};

struct LddpDraw {
  Eigen::MatrixXd beta;    // H x p
  Eigen::VectorXd sigma2;  // H
  Eigen::VectorXd weight;  // H, sums to 1
  double alpha = 1.0;
  Eigen::VectorXd mu_b;
  Eigen::MatrixXd s_b;
  double tau2 = 1.0;
};

struct LddpFit {
  DesignMatrixSpec spec;
  ColumnLayout layout;
  LddpPriors priors;
  McmcConfig mcmc;
  std::vector<LddpDraw> draws;
};

namespace detail {

struct LddpResolved {
  double nu_iw = 9.0;
  Eigen::VectorXd m0;
  Eigen::MatrixXd s0, s0_inv, psi;
  double tau2_init = 1.0;
};

inline LddpResolved resolve_priors(const LddpPriors& pr, const Eigen::MatrixXd& x,
                                   const Eigen::VectorXd& y) {
  pr.validate();
  const int p = static_cast<int>(x.cols());
  LddpResolved r;
  r.nu_iw = pr.nu_iw > 0.0 ? pr.nu_iw : std::max(9.0, static_cast<double>(p) + 2.0);
  require(r.nu_iw > p - 1, "LddpPriors: inverse-Wishart degrees of freedom must exceed p - 1");
  Eigen::MatrixXd xtx = x.transpose() * x;
  if (pr.m0.size() > 0 || pr.s0.size() > 0) {
    require(pr.m0.size() == p, "LddpPriors: m0 has wrong dimension");
    require(pr.s0.rows() == p && pr.s0.cols() == p, "LddpPriors: S0 has wrong dimension");
    r.m0 = pr.m0;
    r.s0 = pr.s0;
  } else {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    require(qr.rank() == p,
            "lddp: design matrix is rank deficient; cannot form data-dependent priors");
    r.m0 = qr.solve(y);
    r.s0 = 1000.0 * xtx.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  }
  Eigen::LLT<Eigen::MatrixXd> s0llt(r.s0);
  require(s0llt.info() == Eigen::Success, "LddpPriors: S0 must be positive definite");
  r.s0_inv = s0llt.solve(Eigen::MatrixXd::Identity(p, p));
  r.psi = pr.psi.size() > 0 ? pr.psi : Eigen::MatrixXd(r.s0_inv);
  require(r.psi.rows() == p && r.psi.cols() == p, "LddpPriors: Psi has wrong dimension");
  r.tau2_init = pr.tau2_init > 0.0 ? pr.tau2_init : pr.tau_s1 / pr.tau_s2;
  return r;
}

}  // namespace detail

struct LddpState {
  Eigen::MatrixXd beta;    // H x p
  Eigen::VectorXd sigma2;  // H
  Eigen::VectorXd v;       // stick fractions, v(H-1) = 1
  Eigen::VectorXd weight;  // H
  double alpha = 1.0;
  Eigen::VectorXd mu_b;
  Eigen::MatrixXd s_b;
  double tau2 = 1.0;
  std::vector<int> labels;
  long iteration = 0;
};

namespace detail {

constexpr double kSigma2Floor = 1e-8;

inline void stick_weights(LddpState& st) {
  const int h = static_cast<int>(st.v.size());
  double remaining = 1.0, acc = 0.0;
  for (int j = 0; j < h - 1; ++j) {
    double w = st.v(j) * remaining;
    st.weight(j) = w;
    remaining -= w;
    acc += w;
  }
  // v(h-1) = 1: the last component takes all remaining mass, written as the
  // complement of the accumulated sum so a left-to-right re-sum is exactly 1.
  st.weight(h - 1) = std::max(1.0 - acc, 0.0);
}

inline LddpState init_state(const Eigen::MatrixXd& x, const LddpPriors& pr,
                            const LddpResolved& rp, int truncation) {
  const int p = static_cast<int>(x.cols());
  LddpState st;
  st.beta = rp.m0.transpose().replicate(truncation, 1);
  st.alpha = pr.a0 / pr.b0;
  st.tau2 = rp.tau2_init;
  st.sigma2 = Eigen::VectorXd::Constant(truncation, st.tau2 / pr.tau1);
  st.v = Eigen::VectorXd::Constant(truncation, 1.0 / (1.0 + st.alpha));
  st.v(truncation - 1) = 1.0;
  st.weight.resize(truncation);
  stick_weights(st);
  st.mu_b = rp.m0;
  double denom = rp.nu_iw - p - 1.0;
  st.s_b = denom > 0.0 ? Eigen::MatrixXd(rp.psi / denom) : rp.psi;
  st.labels.assign(x.rows(), 0);
  return st;
}

// Fresh atom from the base measure, used for components with no members.
inline void draw_atom_from_base(const LddpPriors& pr, LddpState& st, int j,
                                const Eigen::MatrixXd& s_b_chol, Rng& rng) {
  st.beta.row(j) = rng.mvn(st.mu_b, s_b_chol).transpose();
  double prec = rng.gamma(0.5 * pr.tau1, 0.5 * st.tau2);
  st.sigma2(j) = std::max(1.0 / prec, kSigma2Floor);
}

// One full blocked update cycle. Exposed for direct testing.
inline void gibbs_sweep(LddpState& st, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                        const LddpPriors& pr, const LddpResolved& rp, Rng& rng) {
  const int h = static_cast<int>(st.v.size());
  const int p = static_cast<int>(x.cols());
  const Eigen::Index n = x.rows();
  const std::string where = "lddp gibbs sweep " + std::to_string(st.iteration);

  // component labels
  Eigen::MatrixXd mu = x * st.beta.transpose();  // n x H
  Eigen::VectorXd logw(h), log_norm(h), inv2s(h);
  for (int j = 0; j < h; ++j) {
    logw(j) = st.weight(j) > 0.0 ? std::log(st.weight(j)) : -std::numeric_limits<double>::infinity();
    log_norm(j) = -0.5 * std::log(2.0 * M_PI * st.sigma2(j));
    inv2s(j) = 0.5 / st.sigma2(j);
  }
  std::vector<double> lw(h);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < h; ++j) {
      double resid = y(i) - mu(i, j);
      lw[j] = logw(j) + log_norm(j) - inv2s(j) * resid * resid;
    }
    st.labels[static_cast<std::size_t>(i)] = rng.categorical_log(lw.data(), h);
  }

  // stick fractions from label counts
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(h);
  for (int lab : st.labels) ++counts(lab);
  int tail = static_cast<int>(n);
  for (int j = 0; j < h - 1; ++j) {
    tail -= counts(j);
    st.v(j) = rng.beta(1.0 + counts(j), st.alpha + tail);
  }
  st.v(h - 1) = 1.0;
  stick_weights(st);

  // atoms: beta_j | sigma2_j normal, then sigma^-2_j gamma, per component
  Eigen::LLT<Eigen::MatrixXd> sb_llt(st.s_b);
  if (sb_llt.info() != Eigen::Success) fail(where + ": atom covariance not positive definite");
  Eigen::MatrixXd s_b_chol = sb_llt.matrixL();
  Eigen::MatrixXd s_b_inv = sb_llt.solve(Eigen::MatrixXd::Identity(p, p));
  for (int j = 0; j < h; ++j) {
    if (counts(j) == 0) {
      draw_atom_from_base(pr, st, j, s_b_chol, rng);
      continue;
    }
    Eigen::MatrixXd xj(counts(j), p);
    Eigen::VectorXd yj(counts(j));
    int row = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (st.labels[static_cast<std::size_t>(i)] == j) {
        xj.row(row) = x.row(i);
        yj(row) = y(i);
        ++row;
      }
    }
    Eigen::MatrixXd prec = s_b_inv + xj.transpose() * xj / st.sigma2(j);
    Eigen::LLT<Eigen::MatrixXd> prec_llt(prec);
    if (prec_llt.info() != Eigen::Success) fail(where + ": atom precision factorization failed");
    Eigen::VectorXd rhs = s_b_inv * st.mu_b + xj.transpose() * yj / st.sigma2(j);
    Eigen::VectorXd mean = prec_llt.solve(rhs);
    // cov = prec^-1, so draw mean + L^-T z with prec = L L^T
    Eigen::VectorXd z(p);
    for (int t = 0; t < p; ++t) z(t) = rng.normal();
    Eigen::VectorXd bj =
        mean + prec_llt.matrixU().solve(z);
    st.beta.row(j) = bj.transpose();
    double rss = (yj - xj * bj).squaredNorm();
    double precision = rng.gamma(0.5 * (pr.tau1 + counts(j)), 0.5 * (st.tau2 + rss));
    st.sigma2(j) = std::max(1.0 / precision, kSigma2Floor);
  }

  // concentration via the auxiliary-variable two-step update
  {
    int occupied = 0;
    for (int j = 0; j < h; ++j)
      if (counts(j) > 0) ++occupied;
    double eta = rng.beta(st.alpha + 1.0, static_cast<double>(n));
    double rate = pr.b0 - std::log(eta);
    double odds = (pr.a0 + occupied - 1.0) / (static_cast<double>(n) * rate);
    bool first = rng.uniform() < odds / (1.0 + odds);
    st.alpha = rng.gamma(first ? pr.a0 + occupied : pr.a0 + occupied - 1.0, rate);
  }

  if (pr.update_base_measure) {
    // mu_b | beta_1..H
    Eigen::MatrixXd mu_prec = rp.s0_inv + h * s_b_inv;
    Eigen::LLT<Eigen::MatrixXd> mu_llt(mu_prec);
    if (mu_llt.info() != Eigen::Success) fail(where + ": base-mean factorization failed");
    Eigen::VectorXd beta_sum = st.beta.colwise().sum().transpose();
    Eigen::VectorXd mu_mean = mu_llt.solve(rp.s0_inv * rp.m0 + s_b_inv * beta_sum);
    Eigen::VectorXd z(p);
    for (int t = 0; t < p; ++t) z(t) = rng.normal();
    st.mu_b = mu_mean + mu_llt.matrixU().solve(z);

    // S_b | beta, mu_b
    Eigen::MatrixXd scatter = rp.psi;
    for (int j = 0; j < h; ++j) {
      Eigen::VectorXd dev = st.beta.row(j).transpose() - st.mu_b;
      scatter += dev * dev.transpose();
    }
    st.s_b = rng.inverse_wishart(rp.nu_iw + h, scatter);

    // tau2 | sigma^-2_1..H
    double prec_sum = st.sigma2.cwiseInverse().sum();
    st.tau2 = rng.gamma(0.5 * (pr.tau_s1 + h * pr.tau1), 0.5 * (pr.tau_s2 + prec_sum));
  }
  ++st.iteration;
}

}  // namespace detail

// Fits the mixture to `records` (already filtered to the target group when
// the design has no group column). The mediator is the response; the design
// spec must not contain mediator terms.
inline LddpFit fit_lddp(std::span<const SubjectRecord> records, const DesignMatrixSpec& spec,
                        const LddpPriors& priors, const McmcConfig& mcmc) {
  mcmc.validate();
  require(records.size() >= 2, "fit_lddp: need at least 2 records");
  require(spec.basis.kind == MediatorBasis::Kind::none,
          "fit_lddp: the mediator is the response; remove mediator terms from the design");
  LddpFit fit;
  fit.spec = spec;
  fit.layout = ColumnLayout::build(spec);
  fit.priors = priors;
  fit.mcmc = mcmc;

  Eigen::MatrixXd x = design_matrix(records, spec, fit.layout);
  Eigen::VectorXd y(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) y(static_cast<Eigen::Index>(i)) = records[i].mediator;

  auto rp = detail::resolve_priors(priors, x, y);
  auto st = detail::init_state(x, priors, rp, mcmc.truncation);
  Rng rng(substream(mcmc.seed, {0x1ddbu}));

  const int n_keep = mcmc.retained();
  fit.draws.reserve(n_keep);
  for (int it = 0; it < mcmc.iterations; ++it) {
    detail::gibbs_sweep(st, x, y, priors, rp, rng);
    if (it >= mcmc.burn_in && (it - mcmc.burn_in) % mcmc.thinning == 0 &&
        static_cast<int>(fit.draws.size()) < n_keep) {
      LddpDraw d;
      d.beta = st.beta;
      d.sigma2 = st.sigma2;
      d.weight = st.weight;
      d.alpha = st.alpha;
      d.mu_b = st.mu_b;
      d.s_b = st.s_b;
      d.tau2 = st.tau2;
      fit.draws.push_back(std::move(d));
    }
  }
  return fit;
}

struct ConditionalDensityGrid {
  int stratum = 0;
  Eigen::VectorXd grid;     // strictly increasing mediator values
  Eigen::MatrixXd density;  // retained iterations x grid points
  Eigen::MatrixXd cdf;
};

// Equally spaced grid spanning [min - 2 sd, max + 2 sd] of the mediators.
inline Eigen::VectorXd default_mediator_grid(std::span<const SubjectRecord> records,
                                             int n_points = 200) {
  require(records.size() >= 2, "default_mediator_grid: need at least 2 records");
  require(n_points >= 2, "default_mediator_grid: need at least 2 points");
  std::vector<double> m;
  m.reserve(records.size());
  for (const auto& r : records) m.push_back(r.mediator);
  double lo = *std::min_element(m.begin(), m.end());
  double hi = *std::max_element(m.begin(), m.end());
  double sd = sd_of(m);
  return Eigen::VectorXd::LinSpaced(n_points, lo - 2.0 * sd, hi + 2.0 * sd);
}

// Mixture density and CDF of the mediator at the stratum's design vector
// with group = 0 (the target-group conditional law).
inline ConditionalDensityGrid eval_density(const LddpFit& fit, const CovariateStratum& stratum,
                                           const Eigen::VectorXd& grid, int threads = 1) {
  require(grid.size() >= 2, "eval_density: grid too small");
  for (Eigen::Index g = 1; g < grid.size(); ++g)
    require(grid(g) > grid(g - 1), "eval_density: grid must be strictly increasing");
  require(!fit.draws.empty(), "eval_density: fit has no draws");

  Eigen::RowVectorXd xrow = expand_design(0, 0.0, stratum.levels, fit.spec, fit.layout);
  ConditionalDensityGrid out;
  out.stratum = stratum.index;
  out.grid = grid;
  const int t_n = static_cast<int>(fit.draws.size());
  const int g_n = static_cast<int>(grid.size());
  out.density.resize(t_n, g_n);
  out.cdf.resize(t_n, g_n);
  parallel_for(static_cast<std::size_t>(t_n), threads, [&](std::size_t t) {
    const LddpDraw& d = fit.draws[t];
    const int h = static_cast<int>(d.weight.size());
    Eigen::VectorXd mu = d.beta * xrow.transpose();
    for (int g = 0; g < g_n; ++g) {
      double f = 0.0, cf = 0.0;
      for (int j = 0; j < h; ++j) {
        double sd = std::sqrt(d.sigma2(j));
        f += d.weight(j) * normal_pdf(grid(g), mu(j), sd);
        cf += d.weight(j) * normal_cdf(grid(g), mu(j), sd);
      }
      out.density(static_cast<Eigen::Index>(t), g) = f;
      out.cdf(static_cast<Eigen::Index>(t), g) = cf;
    }
  });
  return out;
}

// Linear interpolant of the generalized inverse CDF, clamped to the grid.
inline double inverse_cdf_sample(std::span<const double> grid, std::span<const double> cdf,
                                 double u) {
  require(grid.size() == cdf.size() && grid.size() >= 2, "inverse_cdf_sample: bad grid");
  if (u <= cdf.front()) return grid.front();
  if (u >= cdf.back()) return grid.back();
  auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
  std::size_t k = static_cast<std::size_t>(it - cdf.begin());
  double f0 = cdf[k - 1], f1 = cdf[k];
  if (f1 <= f0) return grid[k];
  double frac = (u - f0) / (f1 - f0);
  return grid[k - 1] + frac * (grid[k] - grid[k - 1]);
}

inline void write_density_grid_csv(const std::string& path,
                                   std::span<const ConditionalDensityGrid> grids) {
  std::ofstream out(path);
  if (!out) fail("cannot write density grid file '" + path + "'");
  out << "stratum,iteration,m,f,F\n";
  for (const auto& g : grids) {
    for (Eigen::Index t = 0; t < g.density.rows(); ++t)
      for (Eigen::Index k = 0; k < g.grid.size(); ++k)
        out << g.stratum << "," << t << "," << format_double(g.grid(k)) << ","
            << format_double(g.density(t, k)) << "," << format_double(g.cdf(t, k)) << "\n";
  }
}

// ---- fit serialization ------------------------------------------------------

namespace detail {

inline nlohmann::json vec_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline nlohmann::json mat_json(const Eigen::MatrixXd& m) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(std::move(row));
  }
  return a;
}

inline Eigen::VectorXd vec_from_json(const nlohmann::json& a) {
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

inline Eigen::MatrixXd mat_from_json(const nlohmann::json& a) {
  if (a.empty()) return Eigen::MatrixXd(0, 0);
  Eigen::MatrixXd m(a.size(), a[0].size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a[i][j].get<double>();
  return m;
}

inline nlohmann::json spec_json(const DesignMatrixSpec& spec) {
  nlohmann::json j;
  j["factors"] = nlohmann::json::array();
  for (const auto& f : spec.schema.factors) j["factors"].push_back({{"name", f.name}, {"levels", f.levels}});
  j["intercept"] = spec.intercept;
  j["group_main"] = spec.group_main;
  j["basis"] = {{"kind", static_cast<int>(spec.basis.kind)},
                {"degree", spec.basis.degree},
                {"centering", spec.basis.centering},
                {"cutpoints", spec.basis.cutpoints}};
  j["group_mediator"] = spec.group_mediator;
  j["group_covariate_factors"] = spec.group_covariate_factors;
  j["mediator_covariate_factors"] = spec.mediator_covariate_factors;
  return j;
}

inline DesignMatrixSpec spec_from_json(const nlohmann::json& j) {
  DesignMatrixSpec spec;
  for (const auto& f : j.at("factors"))
    spec.schema.factors.push_back({f.at("name").get<std::string>(),
                                   f.at("levels").get<std::vector<std::string>>()});
  spec.intercept = j.at("intercept").get<bool>();
  spec.group_main = j.at("group_main").get<bool>();
  const auto& b = j.at("basis");
  spec.basis.kind = static_cast<MediatorBasis::Kind>(b.at("kind").get<int>());
  spec.basis.degree = b.at("degree").get<int>();
  spec.basis.centering = b.at("centering").get<double>();
  spec.basis.cutpoints = b.at("cutpoints").get<std::vector<double>>();
  spec.group_mediator = j.at("group_mediator").get<bool>();
  spec.group_covariate_factors = j.at("group_covariate_factors").get<std::vector<int>>();
  spec.mediator_covariate_factors = j.at("mediator_covariate_factors").get<std::vector<int>>();
  return spec;
}

}  // namespace detail

inline void write_lddp_fit(const std::string& path, const LddpFit& fit) {
  nlohmann::json j;
  j["format"] = "lddp-fit";
  j["version"] = 1;
  j["spec"] = detail::spec_json(fit.spec);
  j["mcmc"] = {{"truncation", fit.mcmc.truncation}, {"iterations", fit.mcmc.iterations},
               {"burn_in", fit.mcmc.burn_in},       {"thinning", fit.mcmc.thinning},
               {"seed", fit.mcmc.seed}};
  j["priors"] = {{"a0", fit.priors.a0},
                 {"b0", fit.priors.b0},
                 {"tau1", fit.priors.tau1},
                 {"tau_s1", fit.priors.tau_s1},
                 {"tau_s2", fit.priors.tau_s2},
                 {"nu_iw", fit.priors.nu_iw},
                 {"tau2_init", fit.priors.tau2_init},
                 {"m0", detail::vec_json(fit.priors.m0)},
                 {"s0", detail::mat_json(fit.priors.s0)},
                 {"psi", detail::mat_json(fit.priors.psi)},
                 {"update_base_measure", fit.priors.update_base_measure}};
  j["draws"] = nlohmann::json::array();
  for (const auto& d : fit.draws) {
    j["draws"].push_back({{"beta", detail::mat_json(d.beta)},
                          {"sigma2", detail::vec_json(d.sigma2)},
                          {"weight", detail::vec_json(d.weight)},
                          {"alpha", d.alpha},
                          {"mu_b", detail::vec_json(d.mu_b)},
                          {"s_b", detail::mat_json(d.s_b)},
                          {"tau2", d.tau2}});
  }
  std::ofstream out(path);
  if (!out) fail("cannot write fit file '" + path + "'");
  out << j.dump();
}

inline LddpFit read_lddp_fit(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open fit file '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, true, true);
  require(j.value("format", "") == std::string("lddp-fit"), "not a mixture-fit file: " + path);
  require(j.value("version", 0) == 1, "unsupported fit file version in " + path);
  LddpFit fit;
  fit.spec = detail::spec_from_json(j.at("spec"));
  fit.layout = ColumnLayout::build(fit.spec);
  const auto& m = j.at("mcmc");
  fit.mcmc.truncation = m.at("truncation").get<int>();
  fit.mcmc.iterations = m.at("iterations").get<int>();
  fit.mcmc.burn_in = m.at("burn_in").get<int>();
  fit.mcmc.thinning = m.at("thinning").get<int>();
  fit.mcmc.seed = m.at("seed").get<std::uint64_t>();
  const auto& pr = j.at("priors");
  fit.priors.a0 = pr.at("a0").get<double>();
  fit.priors.b0 = pr.at("b0").get<double>();
  fit.priors.tau1 = pr.at("tau1").get<double>();
  fit.priors.tau_s1 = pr.at("tau_s1").get<double>();
  fit.priors.tau_s2 = pr.at("tau_s2").get<double>();
  fit.priors.nu_iw = pr.at("nu_iw").get<double>();
  fit.priors.tau2_init = pr.at("tau2_init").get<double>();
  fit.priors.m0 = detail::vec_from_json(pr.at("m0"));
  fit.priors.s0 = detail::mat_from_json(pr.at("s0"));
  fit.priors.psi = detail::mat_from_json(pr.at("psi"));
  fit.priors.update_base_measure = pr.at("update_base_measure").get<bool>();
  for (const auto& dj : j.at("draws")) {
    LddpDraw d;
    d.beta = detail::mat_from_json(dj.at("beta"));
    d.sigma2 = detail::vec_from_json(dj.at("sigma2"));
    d.weight = detail::vec_from_json(dj.at("weight"));
    d.alpha = dj.at("alpha").get<double>();
    d.mu_b = detail::vec_from_json(dj.at("mu_b"));
    d.s_b = detail::mat_from_json(dj.at("s_b"));
    d.tau2 = dj.at("tau2").get<double>();
    fit.draws.push_back(std::move(d));
  }
  return fit;
}

}  // namespace densmed
