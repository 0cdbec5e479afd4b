#pragma once

// missBART1: multivariate BART data model joined with a multivariate probit
// regression for the missingness indicators of the responses.

#include <Eigen/Dense>

#include <array>
#include <chrono>
#include <cmath>
#include <utility>
#include <vector>

#include "missbart/chain.hpp"
#include "missbart/data_model.hpp"
#include "missbart/errors.hpp"
#include "missbart/stats.hpp"
#include "missbart/tree.hpp"

namespace missbart {

struct MissBart1Priors {
  NodePriorParams node;
  OmegaPrior omega;
  TreePrior tree;
  PsiHyperPrior psi;
};

struct MissBart1Options {
  int tmvn_sweeps = 10;
  YMisUpdate y_mis_update = YMisUpdate::exact_conditional;
};

/// Diagonal of Psi^{-1} = diag(tau_B0, tau_BX 1_q, tau_BY 1_p).
inline VectorXd psi_precision_diag(const Eigen::Vector3d& tau, Eigen::Index q, Eigen::Index p) {
  VectorXd d(1 + q + p);
  d(0) = tau(0);
  d.segment(1, q).setConstant(tau(1));
  d.tail(p).setConstant(tau(2));
  return d;
}

/// Gamma shapes of (tau_B0, tau_BX, tau_BY) given p, q and the hyperprior.
inline Eigen::Vector3d psi_posterior_shapes(const PsiHyperPrior& h, Eigen::Index p, Eigen::Index q) {
  const double pd = static_cast<double>(p);
  const double qd = static_cast<double>(q);
  return {0.5 * pd + h.alpha0, 0.5 * pd * qd + h.alpha_x, 0.5 * pd * pd + h.alpha_y};
}

/// Gamma rates of (tau_B0, tau_BX, tau_BY) from the diagonal of A = B R^{-1} B'.
inline Eigen::Vector3d psi_posterior_rates(const MatrixXd& b, const MatrixXd& r, const PsiHyperPrior& h,
                                           Eigen::Index q) {
  const Eigen::Index rows = b.rows();
  const MatrixXd r_inv_bt = SpdMatrix(r).llt().solve(b.transpose());
  VectorXd a_diag(rows);
  for (Eigen::Index i = 0; i < rows; ++i) a_diag(i) = b.row(i).dot(r_inv_bt.col(i));
  return {0.5 * a_diag(0) + h.beta0, 0.5 * a_diag.segment(1, q).sum() + h.beta_x,
          0.5 * a_diag.tail(rows - 1 - q).sum() + h.beta_y};
}

inline Eigen::Vector3d update_psi(const MatrixXd& b, const MatrixXd& r, const PsiHyperPrior& h, Eigen::Index q,
                                  Rng& rng) {
  const Eigen::Vector3d shape = psi_posterior_shapes(h, b.cols(), q);
  const Eigen::Vector3d rate = psi_posterior_rates(b, r, h, q);
  return {sample_gamma(shape(0), rate(0), rng), sample_gamma(shape(1), rate(1), rng),
          sample_gamma(shape(2), rate(2), rng)};
}

/// One parameter-expanded draw of (B, R) given the latent matrix M* and the
/// design Z. The prior is B | R ~ MN(0, Psi, R) with R the correlation matrix of
/// Sigma ~ IW(p + 1, I). M* is rescaled along with the expansion so the triple
/// (M*, B, R) moves jointly; signs of M* are unchanged.
inline void update_b_r(const MatrixXd& z, MatrixXd& m_star, MatrixXd& b, MatrixXd& r,
                       const VectorXd& prior_precision, Rng& rng) {
  const Eigen::Index p = m_star.cols();
  const Eigen::Index rr = z.cols();
  MatrixXd c_inv = z.transpose() * z;
  c_inv.diagonal() += prior_precision;
  const SpdMatrix c_inv_spd(std::move(c_inv));
  if (p == 1) {
    const VectorXd lin = z.transpose() * m_star.col(0);
    b.col(0) = sample_mvn_canonical(lin, c_inv_spd, rng);
    r.setOnes(1, 1);
    return;
  }
  const MatrixXd r_inv = SpdMatrix(r).inverse();
  VectorXd d(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    d(j) = std::sqrt(1.0 / sample_gamma(0.5 * static_cast<double>(p + 1), 0.5 * r_inv(j, j), rng));
  }
  const MatrixXd w = m_star * d.asDiagonal();
  const MatrixXd ztw = z.transpose() * w;
  const MatrixXd b_mean = c_inv_spd.llt().solve(ztw);
  MatrixXd s = w.transpose() * w - ztw.transpose() * b_mean;
  s.diagonal().array() += 1.0;
  const SpdMatrix sigma = sample_inverse_wishart(static_cast<double>(z.rows() + p + 1), SpdMatrix(std::move(s)), rng);
  MatrixXd xi(rr, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < rr; ++i) xi(i, j) = rng.normal();
  }
  const MatrixXd row_part = c_inv_spd.llt().matrixU().solve(xi);
  const MatrixXd b_tilde = b_mean + row_part * sigma.lower().transpose();
  const VectorXd d_new = sigma.matrix().diagonal().cwiseSqrt();
  const VectorXd d_inv = d_new.cwiseInverse();
  r = d_inv.asDiagonal() * sigma.matrix() * d_inv.asDiagonal();
  r = 0.5 * (r + r.transpose());
  r.diagonal().setOnes();
  b = b_tilde * d_inv.asDiagonal();
  m_star = w * d_inv.asDiagonal();
}

/// Mean and covariance of the full response row implied by the data model and
/// the probit model: Sigma_Y = (Omega + B_Y R^{-1} B_Y')^{-1},
/// mu_Y = Sigma_Y [Omega yhat + B_Y R^{-1} (m* - B_(Y)' z_(Y))].
inline std::pair<VectorXd, MatrixXd> y_row_moments(const MatrixXd& omega, const MatrixXd& b, const MatrixXd& r,
                                                   const VectorXd& yhat, const VectorXd& m_star,
                                                   const VectorXd& z_head) {
  const Eigen::Index p = omega.rows();
  const Eigen::Index head = b.rows() - p;
  const MatrixXd b_y = b.bottomRows(p);
  const MatrixXd g = SpdMatrix(r).llt().solve(b_y.transpose()).transpose();  // B_Y R^{-1}
  MatrixXd prec = omega + g * b_y.transpose();
  const SpdMatrix prec_spd(std::move(prec));
  const VectorXd lin = omega * yhat + g * (m_star - b.topRows(head).transpose() * z_head);
  return {prec_spd.llt().solve(lin), prec_spd.inverse()};
}

//==============================================================================
// MissBart1Sampler

/// Gibbs sampler over one chain's state. Inputs are already on the working
/// scale: `y_tilde` holds initial values in the missing cells, `m` is 1 where
/// observed. Every block is public so tests can drive single updates.
class MissBart1Sampler {
 public:
  MissBart1Sampler(PredictorMatrix x_tree, MatrixXd z_x, MatrixXd y_tilde, Eigen::MatrixXi m, int n_trees,
                   MissBart1Priors priors, MissBart1Options opts = {})
      : x_(std::move(x_tree)),
        grid_(SplitGrid::from_columns(x_)),
        z_x_(std::move(z_x)),
        y_tilde_(std::move(y_tilde)),
        m_(std::move(m)),
        priors_(std::move(priors)),
        opts_(opts),
        ensemble_(n_trees, x_.rows(), static_cast<int>(y_tilde_.cols())) {
    const Eigen::Index n = y_tilde_.rows();
    const Eigen::Index p = y_tilde_.cols();
    if (x_.rows() != n || z_x_.rows() != n || m_.rows() != n || m_.cols() != p) {
      throw DataError("MissBart1Sampler: inconsistent input shapes");
    }
    if (!y_tilde_.allFinite() || !x_.allFinite() || !z_x_.allFinite()) {
      throw DataError("MissBart1Sampler: working inputs must be complete");
    }
    priors_.tree.validate();
    priors_.psi.validate();
    omega_ = SpdMatrix(MatrixXd(priors_.omega.lambda.cwiseInverse().asDiagonal()));
    b_ = MatrixXd::Zero(1 + z_x_.cols() + p, p);
    r_ = MatrixXd::Identity(p, p);
    tau_ = {priors_.psi.alpha0 / priors_.psi.beta0, priors_.psi.alpha_x / priors_.psi.beta_x,
            priors_.psi.alpha_y / priors_.psi.beta_y};
    m_star_ = m_.cast<double>().array() * 2.0 - 1.0;
  }

  /// One full iteration: trees and leaves, Omega, M*, Y_mis, (B, R), Psi.
  void iterate(Rng& rng) {
    update_trees(rng);
    update_omega(rng);
    update_m_star(rng);
    update_y_mis(rng);
    update_b_r(rng);
    update_psi(rng);
  }

  void update_trees(Rng& rng) {
    ensemble_.sweep(x_, grid_, y_tilde_, omega_, priors_.node, priors_.tree, rng, &tree_stats_);
  }

  void update_omega(Rng& rng) { omega_ = missbart::update_omega(y_tilde_, ensemble_.fitted(), priors_.omega, rng); }

  void update_m_star(Rng& rng) {
    const MatrixXd mean = design() * b_;
    const MatrixXd prec = SpdMatrix(r_).inverse();
    TruncationBox box{std::vector<bool>(static_cast<std::size_t>(p()))};
    for (Eigen::Index i = 0; i < n(); ++i) {
      for (Eigen::Index j = 0; j < p(); ++j) box.positive[static_cast<std::size_t>(j)] = m_(i, j) == 1;
      const VectorXd start = m_star_.row(i).transpose();
      m_star_.row(i) = sample_trunc_mvn_prec(mean.row(i).transpose(), prec, box, rng, opts_.tmvn_sweeps, &start).transpose();
    }
  }

  void update_y_mis(Rng& rng) {
    const Eigen::Index pp = p();
    const Eigen::Index head = b_.rows() - pp;
    const MatrixXd b_y = b_.bottomRows(pp);
    const MatrixXd g = SpdMatrix(r_).llt().solve(b_y.transpose()).transpose();
    const MatrixXd prec = omega_.matrix() + g * b_y.transpose();
    MatrixXd full_cov;
    if (opts_.y_mis_update == YMisUpdate::marginal_block) full_cov = SpdMatrix(prec).inverse();
    const MatrixXd offset = m_star_ - design().leftCols(head) * b_.topRows(head);
    std::vector<Eigen::Index> mis;
    std::vector<Eigen::Index> obs;
    for (Eigen::Index i = 0; i < n(); ++i) {
      mis.clear();
      obs.clear();
      for (Eigen::Index j = 0; j < pp; ++j) (m_(i, j) == 0 ? mis : obs).push_back(j);
      if (mis.empty()) continue;
      const VectorXd lin = omega_.matrix() * ensemble_.fitted().row(i).transpose() + g * offset.row(i).transpose();
      const auto nm = static_cast<Eigen::Index>(mis.size());
      MatrixXd p_mm(nm, nm);
      VectorXd lin_m(nm);
      for (Eigen::Index a = 0; a < nm; ++a) {
        lin_m(a) = lin(mis[a]);
        for (Eigen::Index c = 0; c < nm; ++c) p_mm(a, c) = prec(mis[a], mis[c]);
      }
      VectorXd draw;
      if (opts_.y_mis_update == YMisUpdate::exact_conditional) {
        for (Eigen::Index a = 0; a < nm; ++a) {
          for (Eigen::Index o : obs) lin_m(a) -= prec(mis[a], o) * y_tilde_(i, o);
        }
        draw = sample_mvn_canonical(lin_m, SpdMatrix(std::move(p_mm)), rng);
      } else {
        const VectorXd mu = SpdMatrix(prec).llt().solve(lin);
        VectorXd mu_m(nm);
        MatrixXd cov_mm(nm, nm);
        for (Eigen::Index a = 0; a < nm; ++a) {
          mu_m(a) = mu(mis[a]);
          for (Eigen::Index c = 0; c < nm; ++c) cov_mm(a, c) = full_cov(mis[a], mis[c]);
        }
        draw = sample_mvn(mu_m, SpdMatrix(std::move(cov_mm)), rng);
      }
      for (Eigen::Index a = 0; a < nm; ++a) y_tilde_(i, mis[a]) = draw(a);
    }
  }

  void update_b_r(Rng& rng) {
    missbart::update_b_r(design(), m_star_, b_, r_, psi_precision_diag(tau_, q(), p()), rng);
  }

  void update_psi(Rng& rng) { tau_ = missbart::update_psi(b_, r_, priors_.psi, q(), rng); }

  /// Z = (1, X, Y~) row-wise.
  [[nodiscard]] MatrixXd design() const {
    MatrixXd z(n(), 1 + q() + p());
    z.col(0).setOnes();
    z.middleCols(1, q()) = z_x_;
    z.rightCols(p()) = y_tilde_;
    return z;
  }

  [[nodiscard]] Eigen::Index n() const { return y_tilde_.rows(); }
  [[nodiscard]] Eigen::Index p() const { return y_tilde_.cols(); }
  [[nodiscard]] Eigen::Index q() const { return z_x_.cols(); }

  [[nodiscard]] const PredictorMatrix& x() const { return x_; }
  [[nodiscard]] const SplitGrid& grid() const { return grid_; }
  [[nodiscard]] const MatrixXd& y_tilde() const { return y_tilde_; }
  [[nodiscard]] const Eigen::MatrixXi& m() const { return m_; }
  [[nodiscard]] const MatrixXd& m_star() const { return m_star_; }
  [[nodiscard]] const MatrixXd& b() const { return b_; }
  [[nodiscard]] const MatrixXd& r() const { return r_; }
  [[nodiscard]] const Eigen::Vector3d& tau() const { return tau_; }
  [[nodiscard]] const SpdMatrix& omega() const { return omega_; }
  [[nodiscard]] const SumOfTrees& ensemble() const { return ensemble_; }
  [[nodiscard]] const MissBart1Priors& priors() const { return priors_; }
  [[nodiscard]] const SweepStats& tree_stats() const { return tree_stats_; }

  void set_y_tilde(MatrixXd y) { y_tilde_ = std::move(y); }
  void set_m(Eigen::MatrixXi m) { m_ = std::move(m); }
  void set_m_star(MatrixXd ms) { m_star_ = std::move(ms); }
  void set_b(MatrixXd b) { b_ = std::move(b); }
  void set_r(MatrixXd r) { r_ = std::move(r); }
  void set_tau(const Eigen::Vector3d& tau) { tau_ = tau; }
  void set_omega(SpdMatrix omega) { omega_ = std::move(omega); }
  void set_forest(Forest forest) { ensemble_.reset(std::move(forest), x_); }

 private:
  PredictorMatrix x_;
  SplitGrid grid_;
  MatrixXd z_x_;
  MatrixXd y_tilde_;
  Eigen::MatrixXi m_;
  MissBart1Priors priors_;
  MissBart1Options opts_;
  SumOfTrees ensemble_;
  SpdMatrix omega_;
  MatrixXd m_star_;
  MatrixXd b_;
  MatrixXd r_;
  Eigen::Vector3d tau_;
  SweepStats tree_stats_;
};

//==============================================================================
// Front end

namespace detail {

inline ChainOutput run_missbart1_chain(const Dataset& data, const SamplerConfig& cfg, const PredictorMatrix* x_test,
                                       Rng rng) {
  const auto start = std::chrono::steady_clock::now();
  Rng noise_rng = rng.split(0x6e6f697365ULL);
  ChainOutput out;
  out.model = "missbart1";
  out.n = data.n();
  out.p = data.p();
  out.q = data.q();
  out.config = cfg;
  out.x_names = data.x_names;
  out.y_names = data.y_names;
  out.x_train = data.x;
  out.scaler = ResponseScaler::fit(data.y);
  const MatrixXd y_s = out.scaler.transform(data.y);
  const Eigen::MatrixXi m = data.m();
  out.missing_cells = missing_cell_list(m);

  const VectorXd x_means = observed_column_means(data.x);
  const PredictorMatrix x_imp = fill_missing(data.x, x_means);
  out.z_center = x_imp.colwise().mean().transpose();
  out.z_scale.resize(data.q());
  for (Eigen::Index c = 0; c < data.q(); ++c) {
    const double sd = std::sqrt((x_imp.col(c).array() - out.z_center(c)).square().sum() /
                                std::max<double>(1.0, static_cast<double>(data.n() - 1)));
    out.z_scale(c) = sd > 0.0 ? sd : 1.0;
  }
  const MatrixXd z_x = ((x_imp.rowwise() - out.z_center.transpose()).array().rowwise() /
                        out.z_scale.transpose().array())
                           .matrix();

  auto [node, omega_prior] = calibrate_priors(y_s, data.x, cfg.calibration());
  MissBart1Priors priors{node, omega_prior, cfg.tree_prior, cfg.psi.value_or(PsiHyperPrior::defaults(data.p(), data.q()))};
  MissBart1Sampler sampler(x_imp, z_x, fill_nan(y_s, 0.0), m, cfg.n_trees, priors, {cfg.tmvn_sweeps, cfg.y_mis_update});

  PredictorMatrix x_test_imp;
  if (x_test != nullptr) x_test_imp = fill_missing(*x_test, x_means);

  out.train_prediction_mean = MatrixXd::Zero(data.n(), data.p());
  out.y_tilde_mean = MatrixXd::Zero(data.n(), data.p());
  out.interactions = MatrixXd::Zero(data.q(), data.q());
  const int total = cfg.burn_in + cfg.post_burn_in;
  int stored = 0;
  SweepStats post_stats;
  for (int it = 0; it < total; ++it) {
    const SweepStats before = sampler.tree_stats();
    sampler.iterate(rng);
    if (it >= cfg.burn_in) {
      post_stats.proposed += sampler.tree_stats().proposed - before.proposed;
      post_stats.accepted += sampler.tree_stats().accepted - before.accepted;
    }
    if (!is_stored_iteration(it, cfg)) continue;
    ++stored;
    const Forest& forest = sampler.ensemble().forest();
    VectorXd ym(static_cast<Eigen::Index>(out.missing_cells.size()));
    for (std::size_t c = 0; c < out.missing_cells.size(); ++c) {
      const auto [i, j] = out.missing_cells[c];
      ym(static_cast<Eigen::Index>(c)) = out.scaler.inverse(sampler.y_tilde()(i, j), j);
    }
    out.y_mis.push_back(std::move(ym));
    out.train_prediction_mean += out.scaler.inverse(sampler.ensemble().fitted());
    out.y_tilde_mean += sampler.y_tilde();
    if (x_test != nullptr) {
      out.test_predictions.push_back(predict(forest, x_test_imp, &out.scaler));
      out.test_predictive.push_back(add_predictive_noise(out.test_predictions.back(), sampler.omega(), out.scaler, noise_rng));
    }
    out.b.push_back(sampler.b());
    out.r.push_back(sampler.r());
    out.psi.push_back(sampler.tau());
    out.omega.push_back(sampler.omega().matrix());
    out.split_usage.push_back(split_counts(forest, static_cast<int>(data.q())));
    out.interactions += interaction_counts(forest, static_cast<int>(data.q()));
    if (cfg.store_forests) out.forests.push_back(forest);
  }
  const double denom = std::max(1, stored);
  out.train_prediction_mean /= denom;
  out.y_tilde_mean /= denom;
  out.interactions /= denom;
  out.tree_acceptance =
      post_stats.proposed > 0 ? static_cast<double>(post_stats.accepted) / post_stats.proposed : 0.0;
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace detail

/// Fit missBART1. Missing covariates are mean-imputed; covariates enter the
/// probit design standardized and responses enter it on the scaled range.
inline ChainOutput run_missbart1(const Dataset& data, const SamplerConfig& cfg, const PredictorMatrix* x_test = nullptr) {
  cfg.validate();
  check_dataset(data, "run_missbart1");
  if (x_test != nullptr) check_schema(*x_test, data.q(), "run_missbart1");
  std::vector<ChainOutput> parts;
  const Rng root(cfg.seed);
  for (int c = 0; c < cfg.chains; ++c) parts.push_back(detail::run_missbart1_chain(data, cfg, x_test, root.split(static_cast<std::uint64_t>(c))));
  return merge_chains(std::move(parts));
}

}  // namespace missbart
