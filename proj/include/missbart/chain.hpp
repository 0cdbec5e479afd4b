#pragma once

// Sampler configuration shared by both joint models and the container of
// stored posterior draws.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "missbart/data_model.hpp"
#include "missbart/errors.hpp"
#include "missbart/stats.hpp"
#include "missbart/tree.hpp"

namespace missbart {

/// Gamma (shape, rate) pairs of the three Psi precisions.
struct PsiHyperPrior {
  double alpha0 = 2.0;
  double beta0 = 1.0;
  double alpha_x = 1.0;
  double beta_x = 1.0;
  double alpha_y = 1.0;
  double beta_y = 1.0;

  static PsiHyperPrior defaults(Eigen::Index p, Eigen::Index q) {
    PsiHyperPrior h;
    h.alpha_x = 1.0 + static_cast<double>(q);
    h.alpha_y = 1.0 + static_cast<double>(p + q);
    return h;
  }

  void validate() const {
    for (double v : {alpha0, beta0, alpha_x, beta_x, alpha_y, beta_y}) {
      if (!(v > 0.0)) throw DomainError("PsiHyperPrior: all shapes and rates must be positive");
    }
  }
};

enum class YMisUpdate : std::uint8_t {
  exact_conditional,  // missing sub-vector given the row's observed responses
  marginal_block,     // sub-block of the full-row mean and covariance
};

struct SamplerConfig {
  int n_trees = 100;
  int n_miss_trees = 0;  // 0 selects 20 for p <= 2 and 50 otherwise
  int burn_in = 5000;
  int post_burn_in = 5000;
  int thin = 1;
  int chains = 1;
  std::uint64_t seed = 1;
  double nu = 3.0;
  double rho_tau = 0.9;
  double rho_mu = 0.95;
  TreePrior tree_prior;
  std::optional<PsiHyperPrior> psi;
  int tmvn_sweeps = 10;
  double sigma_y = 0.0;  // 0 selects 0.5 / p
  YMisUpdate y_mis_update = YMisUpdate::exact_conditional;
  bool store_forests = true;

  void validate() const {
    if (n_trees < 1) throw UsageError("n_trees must be >= 1");
    if (n_miss_trees < 0) throw UsageError("n_miss_trees must be >= 0");
    if (burn_in < 1 || post_burn_in < 1) throw UsageError("burn-in and post-burn-in must be >= 1");
    if (thin < 1) throw UsageError("thin must be >= 1");
    if (chains < 1) throw UsageError("chains must be >= 1");
    if (tmvn_sweeps < 1) throw UsageError("tmvn_sweeps must be >= 1");
    if (sigma_y < 0.0) throw UsageError("sigma_y must be >= 0");
    tree_prior.validate();
    if (psi) psi->validate();
  }

  [[nodiscard]] int miss_trees(Eigen::Index p) const {
    if (n_miss_trees > 0) return n_miss_trees;
    return p <= 2 ? 20 : 50;
  }

  [[nodiscard]] double random_walk_sd(Eigen::Index p) const {
    return sigma_y > 0.0 ? sigma_y : 0.5 / static_cast<double>(p);
  }

  [[nodiscard]] CalibrationConfig calibration() const { return {n_trees, nu, rho_tau, rho_mu}; }
};

/// Random-walk step for missing responses on the scaled scale.
inline double default_sigma_y(Eigen::Index p) {
  if (p < 1) throw DomainError("default_sigma_y: p must be >= 1");
  return 0.5 / static_cast<double>(p);
}

/// Stored post-burn-in draws of one model fit (possibly several merged chains).
struct ChainOutput {
  std::string model;
  Eigen::Index n = 0;
  Eigen::Index p = 0;
  Eigen::Index q = 0;
  SamplerConfig config;
  ResponseScaler scaler;
  std::vector<std::string> x_names;
  std::vector<std::string> y_names;
  PredictorMatrix x_train;
  std::vector<std::array<int, 2>> missing_cells;  // (row, column), row-major order

  std::vector<VectorXd> y_mis;                // per draw, original units
  std::vector<MatrixXd> test_predictions;     // per draw, original units
  std::vector<MatrixXd> test_predictive;      // test_predictions plus residual noise
  MatrixXd train_prediction_mean;             // original units
  MatrixXd y_tilde_mean;                      // completed responses, scaled units
  std::vector<MatrixXd> b;                    // missBART1 coefficients, r x p
  std::vector<MatrixXd> r;                    // missBART1 latent correlation
  std::vector<VectorXd> psi;                  // (tau_B0, tau_BX, tau_BY)
  std::vector<MatrixXd> omega;                // scaled-units residual precision
  std::vector<VectorXd> split_usage;          // data forest, q entries
  std::vector<VectorXd> miss_split_usage;     // missingness forest, q + p entries
  MatrixXd interactions;                      // data forest, mean pair counts
  MatrixXd miss_interactions;
  MatrixXd detection;                         // mean Phi(fitted latent), missBART2
  VectorXd z_center;                          // missBART1 covariate standardization
  VectorXd z_scale;
  std::vector<Forest> forests;
  std::vector<Forest> miss_forests;
  double y_mis_acceptance = std::numeric_limits<double>::quiet_NaN();
  double tree_acceptance = std::numeric_limits<double>::quiet_NaN();
  int chains = 1;
  double wall_seconds = 0.0;

  [[nodiscard]] std::size_t draws() const { return omega.size(); }

  /// Posterior mean of every missing cell in original units.
  [[nodiscard]] VectorXd y_mis_mean() const {
    VectorXd mean = VectorXd::Zero(static_cast<Eigen::Index>(missing_cells.size()));
    if (y_mis.empty()) return mean;
    for (const auto& d : y_mis) mean += d;
    return mean / static_cast<double>(y_mis.size());
  }

  [[nodiscard]] MatrixXd test_prediction_mean() const {
    if (test_predictions.empty()) return {};
    MatrixXd mean = MatrixXd::Zero(test_predictions.front().rows(), test_predictions.front().cols());
    for (const auto& d : test_predictions) mean += d;
    return mean / static_cast<double>(test_predictions.size());
  }
};

/// Concatenate the draws of independent chains of the same model and data.
inline ChainOutput merge_chains(std::vector<ChainOutput> parts) {
  if (parts.empty()) throw UsageError("merge_chains: nothing to merge");
  ChainOutput out = std::move(parts.front());
  double total = static_cast<double>(out.draws());
  auto weighted = [](MatrixXd& acc, const MatrixXd& add, double w_acc, double w_add) {
    if (acc.size() == 0 || add.size() == 0) return;
    acc = (acc * w_acc + add * w_add) / (w_acc + w_add);
  };
  auto append = [](auto& dst, auto& src) { dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end())); };
  double acc_y = out.y_mis_acceptance * total;
  double acc_t = out.tree_acceptance * total;
  for (std::size_t c = 1; c < parts.size(); ++c) {
    ChainOutput& part = parts[c];
    if (part.model != out.model || part.n != out.n || part.p != out.p || part.q != out.q) {
      throw UsageError("merge_chains: chains differ in model or shape");
    }
    const double w = static_cast<double>(part.draws());
    weighted(out.train_prediction_mean, part.train_prediction_mean, total, w);
    weighted(out.y_tilde_mean, part.y_tilde_mean, total, w);
    weighted(out.interactions, part.interactions, total, w);
    weighted(out.miss_interactions, part.miss_interactions, total, w);
    weighted(out.detection, part.detection, total, w);
    append(out.y_mis, part.y_mis);
    append(out.test_predictions, part.test_predictions);
    append(out.test_predictive, part.test_predictive);
    append(out.b, part.b);
    append(out.r, part.r);
    append(out.psi, part.psi);
    append(out.omega, part.omega);
    append(out.split_usage, part.split_usage);
    append(out.miss_split_usage, part.miss_split_usage);
    append(out.forests, part.forests);
    append(out.miss_forests, part.miss_forests);
    acc_y += part.y_mis_acceptance * w;
    acc_t += part.tree_acceptance * w;
    total += w;
    out.wall_seconds += part.wall_seconds;
    out.chains += part.chains;
  }
  out.y_mis_acceptance = acc_y / total;
  out.tree_acceptance = acc_t / total;
  return out;
}

//==============================================================================
// Shared helpers for the front-end runners

/// Row-major list of the cells where m is zero.
inline std::vector<std::array<int, 2>> missing_cell_list(const Eigen::MatrixXi& m) {
  std::vector<std::array<int, 2>> cells;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (m(i, j) == 0) cells.push_back({static_cast<int>(i), static_cast<int>(j)});
    }
  }
  return cells;
}

inline VectorXd observed_column_means(const PredictorMatrix& x) {
  VectorXd means = VectorXd::Zero(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    double sum = 0.0;
    int count = 0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      if (!std::isnan(x(r, c))) {
        sum += x(r, c);
        ++count;
      }
    }
    means(c) = count > 0 ? sum / count : 0.0;
  }
  return means;
}

inline PredictorMatrix fill_missing(const PredictorMatrix& x, const VectorXd& fill) {
  PredictorMatrix out = x;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (std::isnan(out(r, c))) out(r, c) = fill(c);
    }
  }
  return out;
}

/// Response matrix with NaN cells replaced by `value`.
inline MatrixXd fill_nan(const MatrixXd& y, double value) {
  return y.unaryExpr([value](double v) { return std::isnan(v) ? value : v; });
}

inline void check_dataset(const Dataset& data, const char* who) {
  if (data.n() < 2 || data.p() < 1) throw DataError(std::string(who) + ": need >= 2 rows and >= 1 response");
  if (data.x.rows() != data.n()) throw DataError(std::string(who) + ": X and Y row counts differ");
  if (data.q() < 1) throw DataError(std::string(who) + ": need >= 1 covariate");
}

/// Posterior predictive draw in original units: mean plus N(0, Omega^{-1})
/// noise mapped through the scaler's column ranges.
inline MatrixXd add_predictive_noise(const MatrixXd& mean, const SpdMatrix& omega, const ResponseScaler& scaler,
                                     Rng& rng) {
  const MatrixXd l = omega.inverse_spd().lower();
  MatrixXd out = mean;
  for (Eigen::Index i = 0; i < mean.rows(); ++i) {
    const VectorXd e = l * standard_normal_vector(mean.cols(), rng);
    for (Eigen::Index j = 0; j < mean.cols(); ++j) out(i, j) += e(j) * scaler.range(j);
  }
  return out;
}

/// Whether iteration `it` (0-based, counting burn-in) is stored.
inline bool is_stored_iteration(int it, const SamplerConfig& cfg) {
  return it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == cfg.thin - 1;
}

}  // namespace missbart
