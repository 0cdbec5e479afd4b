#pragma once

// The multivariate BART data model: response scaling, prior calibration, the
// Omega update, prediction, and a plain (complete-case) multivariate BART fit.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "missbart/errors.hpp"
#include "missbart/stats.hpp"
#include "missbart/tree.hpp"

namespace missbart {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Covariates, responses (NaN = missing) and their names.
struct Dataset {
  PredictorMatrix x;
  MatrixXd y;
  std::vector<std::string> x_names;
  std::vector<std::string> y_names;

  [[nodiscard]] Eigen::Index n() const { return y.rows(); }
  [[nodiscard]] Eigen::Index p() const { return y.cols(); }
  [[nodiscard]] Eigen::Index q() const { return x.cols(); }

  /// Missingness indicator: 1 where observed.
  [[nodiscard]] Eigen::MatrixXi m() const {
    return y.unaryExpr([](double v) { return std::isnan(v) ? 0 : 1; });
  }
};

/// Rows of a matrix selected by index.
template <class Matrix>
Matrix take_rows(const Matrix& a, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = a.row(rows[i]);
  return out;
}

inline Dataset subset_rows(const Dataset& d, const std::vector<int>& rows) {
  return Dataset{take_rows(d.x, rows), take_rows(d.y, rows), d.x_names, d.y_names};
}

//==============================================================================
// ResponseScaler

/// Affine map of each response column's observed range onto [-0.5, 0.5].
class ResponseScaler {
 public:
  ResponseScaler() = default;
  ResponseScaler(VectorXd lo, VectorXd hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
    for (Eigen::Index j = 0; j < lo_.size(); ++j) {
      if (!(hi_(j) > lo_(j))) throw DataError("ResponseScaler: column " + std::to_string(j) + " has max <= min");
    }
  }

  static ResponseScaler fit(const MatrixXd& y) {
    VectorXd lo(y.cols());
    VectorXd hi(y.cols());
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      lo(j) = std::numeric_limits<double>::infinity();
      hi(j) = -std::numeric_limits<double>::infinity();
      int count = 0;
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const double v = y(i, j);
        if (std::isnan(v)) continue;
        lo(j) = std::min(lo(j), v);
        hi(j) = std::max(hi(j), v);
        ++count;
      }
      if (count < 2) throw DataError("ResponseScaler: column " + std::to_string(j) + " needs >= 2 observed values");
    }
    return ResponseScaler(std::move(lo), std::move(hi));
  }

  [[nodiscard]] Eigen::Index dim() const { return lo_.size(); }
  [[nodiscard]] const VectorXd& lower() const { return lo_; }
  [[nodiscard]] const VectorXd& upper() const { return hi_; }
  [[nodiscard]] double range(Eigen::Index j) const { return hi_(j) - lo_(j); }

  [[nodiscard]] double transform(double v, Eigen::Index j) const { return (v - lo_(j)) / range(j) - 0.5; }
  [[nodiscard]] double inverse(double v, Eigen::Index j) const { return (v + 0.5) * range(j) + lo_(j); }

  /// NaN cells pass through unchanged.
  [[nodiscard]] MatrixXd transform(const MatrixXd& y) const {
    MatrixXd out(y.rows(), y.cols());
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      for (Eigen::Index i = 0; i < y.rows(); ++i) out(i, j) = transform(y(i, j), j);
    }
    return out;
  }

  [[nodiscard]] MatrixXd inverse(const MatrixXd& y) const {
    MatrixXd out(y.rows(), y.cols());
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      for (Eigen::Index i = 0; i < y.rows(); ++i) out(i, j) = inverse(y(i, j), j);
    }
    return out;
  }

 private:
  VectorXd lo_;
  VectorXd hi_;
};

//==============================================================================
// Priors

struct OmegaPrior {
  double nu = 3.0;
  VectorXd rho_tau;
  VectorXd tau_hat;
  VectorXd lambda;
  SpdMatrix v;      // V = diag(1 / (nu * lambda_j))
  SpdMatrix v_inv;

  static OmegaPrior from_lambda(double nu, VectorXd lambda) {
    OmegaPrior out;
    out.nu = nu;
    out.v = SpdMatrix(MatrixXd((nu * lambda).cwiseInverse().asDiagonal()));
    out.v_inv = SpdMatrix(MatrixXd((nu * lambda).asDiagonal()));
    out.lambda = std::move(lambda);
    return out;
  }
};

struct CalibrationConfig {
  int n_trees = 100;
  double nu = 3.0;
  double rho_tau = 0.9;
  double rho_mu = 0.95;
};

/// Prior precision of one leaf coordinate so that a sum of K leaves lies in an
/// interval of width `range` with probability rho_mu: 4 K k^2 / range^2.
inline double leaf_precision(int n_trees, double rho_mu, double range = 1.0) {
  if (n_trees < 1) throw DomainError("leaf_precision: need at least one tree");
  if (!(rho_mu > 0.0 && rho_mu < 1.0) || !(range > 0.0)) throw DomainError("leaf_precision: bad rho_mu or range");
  const double k = norm_quantile(0.5 * (1.0 + rho_mu));
  return 4.0 * static_cast<double>(n_trees) * k * k / (range * range);
}

/// Rough residual precision of one response column: least squares on [1, X]
/// over observed rows, or 1/var(y) when the regression is degenerate.
inline double rough_precision(const VectorXd& y_obs, const MatrixXd& x_obs) {
  const Eigen::Index n = y_obs.size();
  if (n < 2) throw DataError("rough_precision: need >= 2 observed values");
  const double mean = y_obs.mean();
  const double sample_var = (y_obs.array() - mean).square().sum() / static_cast<double>(n - 1);
  MatrixXd design(n, x_obs.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(x_obs.cols()) = x_obs;
  const Eigen::ColPivHouseholderQR<MatrixXd> qr(design);
  if (qr.rank() < design.cols() || n - design.cols() < 1) {
    if (!(sample_var > 0.0)) throw DataError("rough_precision: constant response column");
    return 1.0 / sample_var;
  }
  const VectorXd beta = qr.solve(y_obs);
  const double rss = (y_obs - design * beta).squaredNorm();
  const double resid_var = rss / static_cast<double>(n - design.cols());
  if (!(resid_var > 0.0)) {
    if (!(sample_var > 0.0)) throw DataError("rough_precision: constant response column");
    return 1.0 / sample_var;
  }
  return 1.0 / resid_var;
}

/// Replace NaN covariate cells with their column mean over observed cells.
inline PredictorMatrix mean_impute(const PredictorMatrix& x) {
  PredictorMatrix out = x;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    double sum = 0.0;
    int count = 0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      if (!std::isnan(x(r, c))) {
        sum += x(r, c);
        ++count;
      }
    }
    const double fill = count > 0 ? sum / count : 0.0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      if (std::isnan(out(r, c))) out(r, c) = fill;
    }
  }
  return out;
}

/// Leaf prior and Wishart prior from the scaled, partially observed responses.
inline std::pair<NodePriorParams, OmegaPrior> calibrate_priors(const MatrixXd& y_scaled, const PredictorMatrix& x,
                                                               const CalibrationConfig& cfg) {
  const Eigen::Index p = y_scaled.cols();
  if (!(cfg.nu > static_cast<double>(p) - 1.0)) throw DomainError("calibrate_priors: nu must exceed p - 1");
  NodePriorParams node;
  node.tau_mu = leaf_precision(cfg.n_trees, cfg.rho_mu);
  node.mu0 = VectorXd::Zero(p);

  const PredictorMatrix xi = mean_impute(x);
  VectorXd tau_hat(p);
  VectorXd lambda(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    std::vector<int> rows;
    for (Eigen::Index i = 0; i < y_scaled.rows(); ++i) {
      if (!std::isnan(y_scaled(i, j))) rows.push_back(static_cast<int>(i));
    }
    if (rows.size() < 2) throw DataError("calibrate_priors: response column " + std::to_string(j) + " is (almost) all missing");
    VectorXd yo(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) yo(static_cast<Eigen::Index>(k)) = y_scaled(rows[k], j);
    const MatrixXd xo = take_rows(MatrixXd(xi), rows);
    tau_hat(j) = rough_precision(yo, xo);
    lambda(j) = solve_lambda(cfg.nu, cfg.rho_tau, tau_hat(j));
  }
  OmegaPrior omega = OmegaPrior::from_lambda(cfg.nu, lambda);
  omega.rho_tau = VectorXd::Constant(p, cfg.rho_tau);
  omega.tau_hat = tau_hat;
  return {node, omega};
}

//==============================================================================
// Gibbs pieces

/// Omega ~ W_p(n + nu, V_Omega) with V_Omega^{-1} = sum_i e_i e_i' + V^{-1}.
inline SpdMatrix update_omega(const MatrixXd& y_tilde, const MatrixXd& fitted, const OmegaPrior& prior, Rng& rng) {
  const MatrixXd e = y_tilde - fitted;
  const SpdMatrix scale_inv(MatrixXd(e.transpose() * e + prior.v_inv.matrix()));
  return sample_wishart(static_cast<double>(y_tilde.rows()) + prior.nu, scale_inv.inverse_spd(), rng);
}

/// Sum of routed leaf vectors, optionally mapped back to original units.
inline MatrixXd predict(const Forest& forest, const PredictorMatrix& x, const ResponseScaler* scaler = nullptr) {
  MatrixXd out = forest.predict(x);
  if (scaler != nullptr) {
    if (scaler->dim() != out.cols()) throw DataError("predict: scaler dimension mismatch");
    out = scaler->inverse(out);
  }
  return out;
}

inline void check_schema(const PredictorMatrix& x, Eigen::Index q, const char* who) {
  if (x.cols() != q) {
    throw DataError(std::string(who) + ": expected " + std::to_string(q) + " predictor columns, got " +
                    std::to_string(x.cols()));
  }
}

/// Forest, Omega and the maintained fitted matrix of one chain.
struct DataModelState {
  SumOfTrees ensemble;
  SpdMatrix omega;

  [[nodiscard]] const MatrixXd& fitted() const { return ensemble.fitted(); }
  [[nodiscard]] const Forest& forest() const { return ensemble.forest(); }
};

}  // namespace missbart
