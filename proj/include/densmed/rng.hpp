#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "densmed/util.hpp"

namespace densmed {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives a child seed from a root seed and a tag path. Every independent
// unit of work (replication, bootstrap draw, chain) gets its own substream,
// which keeps results identical under any thread schedule.
inline std::uint64_t substream(std::uint64_t root, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = root;
  (void)splitmix64(s);
  for (std::uint64_t t : tags) {
    s ^= t + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    (void)splitmix64(s);
  }
  return s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed), seed_of_(seed) {}

  Rng derive(std::uint64_t a, std::uint64_t b = 0) const {
    return Rng(substream(seed_of_, {a, b}));
  }

  std::uint64_t next_u64() { return eng_(); }

  // Uniform on the open interval (0, 1); safe under log() and quantile maps.
  double uniform() { return (static_cast<double>(eng_() >> 12) + 0.5) * 0x1p-52; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Marsaglia–Tsang; parameterized by shape and rate, mean = shape / rate.
  double gamma(double shape, double rate) {
    require(shape > 0 && rate > 0, "gamma: shape and rate must be positive");
    if (shape < 1.0) {
      double u = uniform();
      return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
    }
  }

  double beta(double a, double b) {
    double x = gamma(a, 1.0);
    double y = gamma(b, 1.0);
    return x / (x + y);
  }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  double chi_squared(double df) { return gamma(0.5 * df, 0.5); }

  // Minimum extreme value error draw: survival exp(-e^x).
  double gumbel_min() { return std::log(-std::log(uniform())); }

  // Index draw from unnormalized log weights.
  int categorical_log(const double* logw, int k) {
    double mx = logw[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, logw[j]);
    double total = 0.0;
    for (int j = 0; j < k; ++j) total += std::exp(logw[j] - mx);
    double u = uniform() * total;
    double acc = 0.0;
    for (int j = 0; j < k; ++j) {
      acc += std::exp(logw[j] - mx);
      if (u <= acc) return j;
    }
    return k - 1;
  }

  int categorical(const double* w, int k) {
    double total = 0.0;
    for (int j = 0; j < k; ++j) total += w[j];
    double u = uniform() * total;
    double acc = 0.0;
    for (int j = 0; j < k; ++j) {
      acc += w[j];
      if (u <= acc) return j;
    }
    return k - 1;
  }

  Eigen::VectorXd mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& chol_lower) {
    Eigen::VectorXd z(mean.size());
    for (int i = 0; i < z.size(); ++i) z(i) = normal();
    return mean + chol_lower * z;
  }

  // Bartlett decomposition; `scale_chol` is the lower Cholesky factor of the
  // Wishart scale matrix.
  Eigen::MatrixXd wishart(double df, const Eigen::MatrixXd& scale_chol) {
    int p = static_cast<int>(scale_chol.rows());
    require(df > p - 1, "wishart: df must exceed dimension - 1");
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    for (int i = 0; i < p; ++i) {
      a(i, i) = std::sqrt(chi_squared(df - i));
      for (int j = 0; j < i; ++j) a(i, j) = normal();
    }
    Eigen::MatrixXd l = scale_chol * a;
    return l * l.transpose();
  }

  // X ~ IW(df, psi)  <=>  X^{ -1 } ~ Wishart(df, psi^{ -1 }).
  Eigen::MatrixXd inverse_wishart(double df, const Eigen::MatrixXd& psi) {
    Eigen::LLT<Eigen::MatrixXd> llt(psi.inverse());
    require(llt.info() == Eigen::Success, "inverse_wishart: scale not positive definite");
    Eigen::MatrixXd w = wishart(df, Eigen::MatrixXd(llt.matrixL()));
    return w.inverse();
  }

 private:
  std::mt19937_64 eng_;
  std::uint64_t seed_of_{0};
  bool has_spare_{false};
  double spare_{0.0};
};

}  // namespace densmed
