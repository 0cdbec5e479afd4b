#pragma once

// Random-number and distribution primitives shared by all samplers, plus the
// small dense linear-algebra contract (SpdMatrix) they rely on.

#include <Eigen/Dense>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/tools/roots.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "missbart/errors.hpp"

namespace missbart {

using Eigen::MatrixXd;
using Eigen::VectorXd;

//==============================================================================
// Rng

/// Seeded pseudo-random stream. Equal (seed, stream) pairs give bitwise-equal
/// sequences on one platform; split() derives independent per-chain streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x6d697373u};
    engine_.seed(seq);
  }

  [[nodiscard]] Rng split(std::uint64_t stream) const {
    return Rng(seed_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1)), stream_ + stream + 1);
  }

  [[nodiscard]] std::uint64_t seed() const { return seed_; }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

  double normal() { return normal_(engine_); }

  /// Gamma(shape, rate); mean shape / rate.
  double gamma(double shape, double rate) {
    std::gamma_distribution<double> dist(shape, 1.0 / rate);
    return dist(engine_);
  }

  double chi_square(double dof) { return 2.0 * gamma(0.5 * dof, 1.0); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
  }

  bool bernoulli(double prob) { return uniform() < prob; }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

//==============================================================================
// SpdMatrix

/// Symmetric positive-definite matrix with its Cholesky factor. Construction
/// fails with NumericError when the factorization fails even after a single
/// jitter retry of 1e-10 * trace / dim on the diagonal.
class SpdMatrix {
 public:
  SpdMatrix() = default;

  explicit SpdMatrix(MatrixXd m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols() || m_.rows() == 0) {
      throw NumericError("SpdMatrix: matrix must be square and non-empty");
    }
    if (!m_.allFinite()) throw NumericError("SpdMatrix: non-finite entries");
    const double scale = std::max(1.0, m_.cwiseAbs().maxCoeff());
    if (!m_.isApprox(m_.transpose(), 1e-12) &&
        (m_ - m_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw NumericError("SpdMatrix: matrix is not symmetric");
    }
    m_ = 0.5 * (m_ + m_.transpose());
    llt_.compute(m_);
    if (llt_.info() != Eigen::Success || !factor_positive()) {
      const double jitter = 1e-10 * m_.trace() / static_cast<double>(m_.rows());
      if (!(jitter > 0.0)) throw NumericError("SpdMatrix: Cholesky factorization failed");
      m_.diagonal().array() += jitter;
      llt_.compute(m_);
      if (llt_.info() != Eigen::Success || !factor_positive()) {
        throw NumericError("SpdMatrix: Cholesky factorization failed after jitter");
      }
    }
  }

  static SpdMatrix identity(Eigen::Index dim) { return SpdMatrix(MatrixXd::Identity(dim, dim)); }

  [[nodiscard]] Eigen::Index dim() const { return m_.rows(); }
  [[nodiscard]] const MatrixXd& matrix() const { return m_; }
  [[nodiscard]] const Eigen::LLT<MatrixXd>& llt() const { return llt_; }
  [[nodiscard]] MatrixXd lower() const { return llt_.matrixL(); }

  [[nodiscard]] double log_det() const {
    return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }

  [[nodiscard]] MatrixXd inverse() const {
    MatrixXd inv = llt_.solve(MatrixXd::Identity(dim(), dim()));
    return 0.5 * (inv + inv.transpose());
  }

  [[nodiscard]] SpdMatrix inverse_spd() const { return SpdMatrix(inverse()); }

  [[nodiscard]] double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

 private:
  bool factor_positive() const {
    const auto d = llt_.matrixLLT().diagonal();
    return d.allFinite() && (d.array() > 0.0).all();
  }

  MatrixXd m_;
  Eigen::LLT<MatrixXd> llt_;
};

//==============================================================================
// Normal distribution helpers

inline double norm_cdf(double x) { return 0.5 * boost::math::erfc(-x / std::numbers::sqrt2); }

inline double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("norm_quantile: p must lie in (0, 1)");
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

inline double norm_log_pdf(double x) {
  return -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi);
}

/// Log density of N_p(mean, precision^{-1}) at x.
inline double mvn_log_density_prec(const VectorXd& x, const VectorXd& mean,
                                   const SpdMatrix& precision) {
  const VectorXd d = x - mean;
  const double p = static_cast<double>(x.size());
  return -0.5 * p * std::log(2.0 * std::numbers::pi) + 0.5 * precision.log_det() -
         0.5 * d.dot(precision.matrix() * d);
}

namespace detail {

// log(1 - Phi(z)) for large z via the asymptotic Mills-ratio series.
inline double log_norm_sf_asymptotic(double z) {
  const double z2 = z * z;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k <= 8; ++k) {
    term *= -static_cast<double>(2 * k - 1) / z2;
    sum += term;
  }
  return -0.5 * z2 - std::log(z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(sum);
}

// Draw z ~ N(0,1) conditioned on z >= a by CDF inversion of the upper tail.
inline double std_normal_lower_truncated(double a, Rng& rng) {
  const double u = rng.uniform();
  if (a < 30.0) {
    const double tail = norm_cdf(-a);
    const double z = -norm_quantile(u * tail);
    return std::max(z, a);
  }
  // Far tail: Phi(-a) underflows, so invert log(1 - Phi(z)) = log(u) + log(1 - Phi(a))
  // with Newton steps on the asymptotic expansion.
  const double target = std::log(u) + log_norm_sf_asymptotic(a);
  double z = std::sqrt(a * a - 2.0 * std::log(u));
  for (int it = 0; it < 50; ++it) {
    const double f = log_norm_sf_asymptotic(z) - target;
    const double slope = -(z + 1.0 / z);  // d/dz log sf ~ -mills^{-1}
    const double step = f / slope;
    z -= step;
    if (std::abs(step) < 1e-14 * z) break;
  }
  return std::max(z, a);
}

}  // namespace detail

/// Univariate normal N(mean, sd^2) truncated to [0, inf) when positive is true,
/// otherwise to (-inf, 0]. The sign constraint holds exactly.
inline double sample_trunc_normal(double mean, double sd, bool positive, Rng& rng) {
  if (!(sd > 0.0)) throw DomainError("sample_trunc_normal: sd must be positive");
  if (positive) {
    const double z = detail::std_normal_lower_truncated(-mean / sd, rng);
    const double x = mean + sd * z;
    return x < 0.0 ? 0.0 : x;
  }
  const double z = detail::std_normal_lower_truncated(mean / sd, rng);
  const double x = mean - sd * z;
  return x > 0.0 ? -0.0 : x;
}

//==============================================================================
// TruncationBox

/// Per-coordinate half-line: [0, inf) when positive[j], else (-inf, 0].
struct TruncationBox {
  std::vector<bool> positive;

  [[nodiscard]] std::size_t size() const { return positive.size(); }

  [[nodiscard]] bool contains(const VectorXd& x) const {
    if (static_cast<std::size_t>(x.size()) != positive.size()) return false;
    for (std::size_t j = 0; j < positive.size(); ++j) {
      const double v = x(static_cast<Eigen::Index>(j));
      if (positive[j] ? !(v >= 0.0) : !(v <= 0.0)) return false;
    }
    return true;
  }
};

//==============================================================================
// Multivariate samplers

inline VectorXd standard_normal_vector(Eigen::Index n, Rng& rng) {
  VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
  return z;
}

inline VectorXd sample_mvn(const VectorXd& mean, const SpdMatrix& cov, Rng& rng) {
  if (mean.size() != cov.dim()) throw DomainError("sample_mvn: dimension mismatch");
  return mean + cov.llt().matrixL() * standard_normal_vector(mean.size(), rng);
}

/// Draw from N(precision^{-1} * linear, precision^{-1}) without forming the inverse.
inline VectorXd sample_mvn_canonical(const VectorXd& linear, const SpdMatrix& precision, Rng& rng) {
  const auto& llt = precision.llt();
  VectorXd mean = llt.solve(linear);
  VectorXd z = standard_normal_vector(linear.size(), rng);
  // L^{-T} z has covariance (L L^T)^{-1}.
  VectorXd w = llt.matrixU().solve(z);
  return mean + w;
}

/// Wishart W_p(dof, scale) by the Bartlett decomposition; E[draw] = dof * scale.
inline SpdMatrix sample_wishart(double dof, const SpdMatrix& scale, Rng& rng) {
  const Eigen::Index p = scale.dim();
  if (!(dof > static_cast<double>(p) - 1.0)) {
    throw DomainError("sample_wishart: dof must exceed dim - 1");
  }
  MatrixXd a = MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(rng.chi_square(dof - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  const MatrixXd la = scale.lower() * a;
  return SpdMatrix(la * la.transpose());
}

/// Inverse-Wishart IW_p(dof, scale): the inverse of W_p(dof, scale^{-1}).
inline SpdMatrix sample_inverse_wishart(double dof, const SpdMatrix& scale, Rng& rng) {
  return sample_wishart(dof, scale.inverse_spd(), rng).inverse_spd();
}

/// Multivariate normal restricted to a sign box, parameterized by its precision
/// and drawn by `sweeps` Gibbs passes of univariate truncated-normal full
/// conditionals. `start` (when given and feasible) seeds the chain; otherwise
/// the mean projected onto the box is used.
inline VectorXd sample_trunc_mvn_prec(const VectorXd& mean, const MatrixXd& prec, const TruncationBox& box,
                                      Rng& rng, int sweeps = 10, const VectorXd* start = nullptr) {
  const Eigen::Index p = mean.size();
  if (prec.rows() != p || prec.cols() != p || static_cast<Eigen::Index>(box.size()) != p) {
    throw DomainError("sample_trunc_mvn: dimension mismatch");
  }
  if (sweeps < 1) throw DomainError("sample_trunc_mvn: sweeps must be >= 1");
  VectorXd x(p);
  if (start != nullptr && start->size() == p && box.contains(*start)) {
    x = *start;
  } else {
    for (Eigen::Index j = 0; j < p; ++j) {
      const bool pos = box.positive[static_cast<std::size_t>(j)];
      x(j) = pos ? std::max(mean(j), 0.0) : std::min(mean(j), 0.0);
    }
  }
  if (p == 1) {
    x(0) = sample_trunc_normal(mean(0), 1.0 / std::sqrt(prec(0, 0)), box.positive[0], rng);
    return x;
  }
  for (int s = 0; s < sweeps; ++s) {
    for (Eigen::Index j = 0; j < p; ++j) {
      const double pjj = prec(j, j);
      double shift = 0.0;
      for (Eigen::Index k = 0; k < p; ++k) {
        if (k != j) shift += prec(j, k) * (x(k) - mean(k));
      }
      const double cond_mean = mean(j) - shift / pjj;
      x(j) = sample_trunc_normal(cond_mean, 1.0 / std::sqrt(pjj), box.positive[static_cast<std::size_t>(j)],
                                 rng);
    }
  }
  return x;
}

inline VectorXd sample_trunc_mvn(const VectorXd& mean, const SpdMatrix& cov, const TruncationBox& box,
                                 Rng& rng, int sweeps = 10, const VectorXd* start = nullptr) {
  if (cov.dim() != mean.size()) throw DomainError("sample_trunc_mvn: dimension mismatch");
  return sample_trunc_mvn_prec(mean, cov.inverse(), box, rng, sweeps, start);
}

inline double sample_gamma(double shape, double rate, Rng& rng) {
  if (!(shape > 0.0) || !(rate > 0.0) || !std::isfinite(shape) || !std::isfinite(rate)) {
    throw DomainError("sample_gamma: shape and rate must be positive");
  }
  return rng.gamma(shape, rate);
}

//==============================================================================
// Prior calibration

/// P(tau > tau_hat) for tau ~ Gamma(nu/2, rate nu*lambda/2).
inline double gamma_prior_exceedance(double nu, double lambda, double tau_hat) {
  return boost::math::gamma_q(0.5 * nu, 0.5 * nu * lambda * tau_hat);
}

/// Solve P(tau > tau_hat) = rho for lambda, tau ~ Gamma(nu/2, rate nu*lambda/2),
/// by bracket expansion and TOMS748 to 1e-10 relative.
inline double solve_lambda(double nu, double rho, double tau_hat) {
  if (!(nu > 0.0) || !(rho > 0.0 && rho < 1.0) || !(tau_hat > 0.0)) {
    throw DomainError("solve_lambda: need nu > 0, 0 < rho < 1, tau_hat > 0");
  }
  // Survival decreases in lambda, so f is increasing.
  auto f = [&](double lambda) { return rho - gamma_prior_exceedance(nu, lambda, tau_hat); };
  double lo = 1.0 / tau_hat;
  double hi = lo;
  int expansions = 0;
  while (f(lo) > 0.0) {
    lo *= 0.5;
    if (++expansions > 2000) throw NumericError("solve_lambda: root not bracketed");
  }
  while (f(hi) < 0.0) {
    hi *= 2.0;
    if (++expansions > 2000) throw NumericError("solve_lambda: root not bracketed");
  }
  if (f(lo) == 0.0) return lo;
  if (f(hi) == 0.0) return hi;
  std::uintmax_t max_iter = 500;
  auto tol = [](double a, double b) { return std::abs(b - a) <= 1e-12 * std::abs(std::min(a, b)); };
  const auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, tol, max_iter);
  if (max_iter >= 500) throw NumericError("solve_lambda: root finding did not converge");
  return 0.5 * (a + b);
}

}  // namespace missbart
