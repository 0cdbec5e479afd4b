#pragma once

// missBART2: multivariate BART data model joined with a probit BART model for
// the missingness indicators over (X, Y~), with the latent correlation fixed to
// the identity and random-walk Metropolis-Hastings updates of missing responses.

#include <Eigen/Dense>

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

struct MissBart2Priors {
  NodePriorParams node;
  OmegaPrior omega;
  TreePrior tree;
  NodePriorParams miss_node;
  TreePrior miss_tree;
};

struct MissBart2Options {
  double sigma_y = 0.0;  // 0 selects 0.5 / p
  bool data_factor = true;
  bool miss_factor = true;
};

/// Latent-scale interval width covered by the missingness-forest leaf prior.
inline constexpr double kProbitLatentRange = 6.0;

/// Posterior mean detection probability Phi(fitted latent) from stored per-draw fits.
inline MatrixXd detection_probability(const std::vector<MatrixXd>& latent_fits) {
  if (latent_fits.empty()) throw DomainError("detection_probability: need at least one draw");
  MatrixXd acc = MatrixXd::Zero(latent_fits.front().rows(), latent_fits.front().cols());
  for (const auto& f : latent_fits) acc += f.unaryExpr([](double v) { return norm_cdf(v); });
  return acc / static_cast<double>(latent_fits.size());
}

/// Cutpoint grids of the missingness predictors (X, Y~). Response columns use
/// their observed values only, so the grid never depends on imputations.
inline SplitGrid missingness_grid(const PredictorMatrix& x, const MatrixXd& y_tilde, const Eigen::MatrixXi& m) {
  PredictorMatrix w(x.rows(), x.cols() + y_tilde.cols());
  w.leftCols(x.cols()) = x;
  for (Eigen::Index i = 0; i < y_tilde.rows(); ++i) {
    for (Eigen::Index j = 0; j < y_tilde.cols(); ++j) w(i, x.cols() + j) = m(i, j) == 1 ? y_tilde(i, j) : kNaN;
  }
  return SplitGrid::from_columns(w);
}

//==============================================================================
// MissBart2Sampler

class MissBart2Sampler {
 public:
  MissBart2Sampler(PredictorMatrix x, MatrixXd y_tilde, Eigen::MatrixXi m, int n_trees, int n_miss_trees,
                   MissBart2Priors priors, MissBart2Options opts = {})
      : x_(std::move(x)),
        grid_(SplitGrid::from_columns(x_)),
        y_tilde_(std::move(y_tilde)),
        m_(std::move(m)),
        priors_(std::move(priors)),
        opts_(opts),
        data_(n_trees, x_.rows(), static_cast<int>(y_tilde_.cols())),
        miss_(n_miss_trees, x_.rows(), static_cast<int>(y_tilde_.cols())),
        identity_(SpdMatrix::identity(y_tilde_.cols())) {
    const Eigen::Index n = y_tilde_.rows();
    if (x_.rows() != n || m_.rows() != n || m_.cols() != y_tilde_.cols()) {
      throw DataError("MissBart2Sampler: inconsistent input shapes");
    }
    if (!y_tilde_.allFinite()) throw DataError("MissBart2Sampler: working responses must be complete");
    priors_.tree.validate();
    priors_.miss_tree.validate();
    if (opts_.sigma_y <= 0.0) opts_.sigma_y = default_sigma_y(p());
    miss_grid_ = missingness_grid(x_, y_tilde_, m_);
    w_.resize(n, q() + p());
    w_.leftCols(q()) = x_;
    w_.rightCols(p()) = y_tilde_;
    omega_ = SpdMatrix(MatrixXd(priors_.omega.lambda.cwiseInverse().asDiagonal()));
    m_star_ = m_.cast<double>().array() * 2.0 - 1.0;
    data_.reset(data_.forest(), x_);
    miss_.reset(miss_.forest(), w_);
  }

  /// One iteration: data trees, missingness trees, Omega, M*, Y_mis.
  void iterate(Rng& rng) {
    update_data_trees(rng);
    update_miss_trees(rng);
    update_omega(rng);
    update_m_star(rng);
    update_y_mis(rng);
  }

  void update_data_trees(Rng& rng) {
    data_.sweep(x_, grid_, y_tilde_, omega_, priors_.node, priors_.tree, rng, &tree_stats_);
  }

  /// Missingness trees see unit residual precision in both the node marginal
  /// and the leaf posterior.
  void update_miss_trees(Rng& rng) {
    miss_.sweep(w_, miss_grid_, m_star_, identity_, priors_.miss_node, priors_.miss_tree, rng, &miss_tree_stats_);
  }

  void update_omega(Rng& rng) { omega_ = missbart::update_omega(y_tilde_, data_.fitted(), priors_.omega, rng); }

  void update_m_star(Rng& rng) {
    const MatrixXd& mean = miss_.fitted();
    for (Eigen::Index i = 0; i < n(); ++i) {
      for (Eigen::Index j = 0; j < p(); ++j) m_star_(i, j) = sample_trunc_normal(mean(i, j), 1.0, m_(i, j) == 1, rng);
    }
  }

  /// Log acceptance ratio of moving cell (i, j) to `y_new`. `new_leaves`
  /// receives the missingness-tree leaves of the proposed row; returns -inf
  /// when the move would empty a missingness-tree leaf.
  double log_acceptance(Eigen::Index i, Eigen::Index j, double y_new, std::vector<int>* new_leaves,
                        const std::vector<std::vector<int>>* leaf_counts = nullptr) const {
    const double y_old = y_tilde_(i, j);
    const double delta = y_new - y_old;
    double log_ratio = 0.0;
    if (opts_.data_factor) {
      const VectorXd d_old = y_tilde_.row(i).transpose() - data_.fitted().row(i).transpose();
      const double omega_d = omega_.matrix().row(j).dot(d_old);
      log_ratio += -0.5 * (delta * delta * omega_(j, j) + 2.0 * delta * omega_d);
    }
    const auto& forest = miss_.forest();
    std::vector<double> row(w_.data() + i * w_.cols(), w_.data() + (i + 1) * w_.cols());
    row[static_cast<std::size_t>(q() + j)] = y_new;
    new_leaves->resize(forest.trees.size());
    VectorXd shift = VectorXd::Zero(p());
    for (std::size_t k = 0; k < forest.trees.size(); ++k) {
      const DecisionTree& t = forest.trees[k];
      const int old_leaf = miss_.leaf_index()[k][static_cast<std::size_t>(i)];
      const int leaf = t.route(row.data());
      (*new_leaves)[k] = leaf;
      if (leaf == old_leaf) continue;
      if (leaf_counts != nullptr && (*leaf_counts)[k][static_cast<std::size_t>(old_leaf)] <= 1) {
        return -std::numeric_limits<double>::infinity();
      }
      shift += t.node(leaf).mu - t.node(old_leaf).mu;
    }
    if (opts_.miss_factor) {
      const VectorXd resid_old = m_star_.row(i).transpose() - miss_.fitted().row(i).transpose();
      const VectorXd resid_new = resid_old - shift;
      log_ratio += -0.5 * (resid_new.squaredNorm() - resid_old.squaredNorm());
    }
    return log_ratio;
  }

  /// One scalar random-walk proposal per missing cell, rows in order and a
  /// row's cells in column order.
  void update_y_mis(Rng& rng) {
    const auto& forest = miss_.forest();
    std::vector<std::vector<int>> counts(forest.trees.size());
    for (std::size_t k = 0; k < forest.trees.size(); ++k) {
      counts[k].assign(static_cast<std::size_t>(forest.trees[k].size()), 0);
      for (int leaf : miss_.leaf_index()[k]) ++counts[k][static_cast<std::size_t>(leaf)];
    }
    std::vector<int> new_leaves;
    for (Eigen::Index i = 0; i < n(); ++i) {
      for (Eigen::Index j = 0; j < p(); ++j) {
        if (m_(i, j) == 1) continue;
        const double y_new = y_tilde_(i, j) + opts_.sigma_y * rng.normal();
        const double u = rng.uniform();
        ++y_mis_proposed_;
        const double log_ratio = log_acceptance(i, j, y_new, &new_leaves, &counts);
        if (!(std::log(u) < log_ratio)) continue;
        ++y_mis_accepted_;
        y_tilde_(i, j) = y_new;
        w_(i, q() + j) = y_new;
        for (std::size_t k = 0; k < forest.trees.size(); ++k) {
          const int old_leaf = miss_.leaf_index()[k][static_cast<std::size_t>(i)];
          if (new_leaves[k] == old_leaf) continue;
          --counts[k][static_cast<std::size_t>(old_leaf)];
          ++counts[k][static_cast<std::size_t>(new_leaves[k])];
          miss_.move_row(k, i, new_leaves[k]);
        }
      }
    }
  }

  [[nodiscard]] Eigen::Index n() const { return y_tilde_.rows(); }
  [[nodiscard]] Eigen::Index p() const { return y_tilde_.cols(); }
  [[nodiscard]] Eigen::Index q() const { return x_.cols(); }

  [[nodiscard]] const PredictorMatrix& x() const { return x_; }
  [[nodiscard]] const PredictorMatrix& miss_inputs() const { return w_; }
  [[nodiscard]] const SplitGrid& grid() const { return grid_; }
  [[nodiscard]] const SplitGrid& miss_grid() const { return miss_grid_; }
  [[nodiscard]] const MatrixXd& y_tilde() const { return y_tilde_; }
  [[nodiscard]] const Eigen::MatrixXi& m() const { return m_; }
  [[nodiscard]] const MatrixXd& m_star() const { return m_star_; }
  [[nodiscard]] const SpdMatrix& omega() const { return omega_; }
  [[nodiscard]] const SumOfTrees& data_ensemble() const { return data_; }
  [[nodiscard]] const SumOfTrees& miss_ensemble() const { return miss_; }
  [[nodiscard]] const MissBart2Priors& priors() const { return priors_; }
  [[nodiscard]] double sigma_y() const { return opts_.sigma_y; }
  [[nodiscard]] long y_mis_proposed() const { return y_mis_proposed_; }
  [[nodiscard]] long y_mis_accepted() const { return y_mis_accepted_; }
  [[nodiscard]] const SweepStats& tree_stats() const { return tree_stats_; }

  void set_y_tilde(MatrixXd y) {
    y_tilde_ = std::move(y);
    w_.rightCols(p()) = y_tilde_;
    data_.reset(data_.forest(), x_);
    miss_.reset(miss_.forest(), w_);
  }
  void set_m(Eigen::MatrixXi m) { m_ = std::move(m); }
  void set_m_star(MatrixXd ms) { m_star_ = std::move(ms); }
  void set_omega(SpdMatrix omega) { omega_ = std::move(omega); }
  void set_data_forest(Forest f) { data_.reset(std::move(f), x_); }
  void set_miss_forest(Forest f) { miss_.reset(std::move(f), w_); }

 private:
  PredictorMatrix x_;
  SplitGrid grid_;
  MatrixXd y_tilde_;
  Eigen::MatrixXi m_;
  MissBart2Priors priors_;
  MissBart2Options opts_;
  SumOfTrees data_;
  SumOfTrees miss_;
  SpdMatrix identity_;
  SplitGrid miss_grid_;
  PredictorMatrix w_;
  SpdMatrix omega_;
  MatrixXd m_star_;
  long y_mis_proposed_ = 0;
  long y_mis_accepted_ = 0;
  SweepStats tree_stats_;
  SweepStats miss_tree_stats_;
};

//==============================================================================
// Front end

namespace detail {

inline ChainOutput run_missbart2_chain(const Dataset& data, const SamplerConfig& cfg, const PredictorMatrix* x_test,
                                       Rng rng) {
  const auto start = std::chrono::steady_clock::now();
  Rng noise_rng = rng.split(0x6e6f697365ULL);
  ChainOutput out;
  out.model = "missbart2";
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

  const int k_m = cfg.miss_trees(data.p());
  auto [node, omega_prior] = calibrate_priors(y_s, data.x, cfg.calibration());
  NodePriorParams miss_node{leaf_precision(k_m, cfg.rho_mu, kProbitLatentRange), VectorXd::Zero(data.p())};
  MissBart2Priors priors{node, omega_prior, cfg.tree_prior, miss_node, cfg.tree_prior};
  MissBart2Sampler sampler(data.x, fill_nan(y_s, 0.0), m, cfg.n_trees, k_m, priors, {cfg.random_walk_sd(data.p())});

  const int n_vars_miss = static_cast<int>(data.q() + data.p());
  out.train_prediction_mean = MatrixXd::Zero(data.n(), data.p());
  out.y_tilde_mean = MatrixXd::Zero(data.n(), data.p());
  out.detection = MatrixXd::Zero(data.n(), data.p());
  out.interactions = MatrixXd::Zero(data.q(), data.q());
  out.miss_interactions = MatrixXd::Zero(n_vars_miss, n_vars_miss);
  const int total = cfg.burn_in + cfg.post_burn_in;
  int stored = 0;
  long prop0 = 0;
  long acc0 = 0;
  SweepStats post_stats;
  for (int it = 0; it < total; ++it) {
    if (it == cfg.burn_in) {
      prop0 = sampler.y_mis_proposed();
      acc0 = sampler.y_mis_accepted();
    }
    const SweepStats before = sampler.tree_stats();
    sampler.iterate(rng);
    if (it >= cfg.burn_in) {
      post_stats.proposed += sampler.tree_stats().proposed - before.proposed;
      post_stats.accepted += sampler.tree_stats().accepted - before.accepted;
    }
    if (!is_stored_iteration(it, cfg)) continue;
    ++stored;
    const Forest& forest = sampler.data_ensemble().forest();
    const Forest& miss_forest = sampler.miss_ensemble().forest();
    VectorXd ym(static_cast<Eigen::Index>(out.missing_cells.size()));
    for (std::size_t c = 0; c < out.missing_cells.size(); ++c) {
      const auto [i, j] = out.missing_cells[c];
      ym(static_cast<Eigen::Index>(c)) = out.scaler.inverse(sampler.y_tilde()(i, j), j);
    }
    out.y_mis.push_back(std::move(ym));
    out.train_prediction_mean += out.scaler.inverse(sampler.data_ensemble().fitted());
    out.y_tilde_mean += sampler.y_tilde();
    out.detection += sampler.miss_ensemble().fitted().unaryExpr([](double v) { return norm_cdf(v); });
    if (x_test != nullptr) {
      out.test_predictions.push_back(predict(forest, *x_test, &out.scaler));
      out.test_predictive.push_back(add_predictive_noise(out.test_predictions.back(), sampler.omega(), out.scaler, noise_rng));
    }
    out.omega.push_back(sampler.omega().matrix());
    out.split_usage.push_back(split_counts(forest, static_cast<int>(data.q())));
    out.miss_split_usage.push_back(split_counts(miss_forest, n_vars_miss));
    out.interactions += interaction_counts(forest, static_cast<int>(data.q()));
    out.miss_interactions += interaction_counts(miss_forest, n_vars_miss);
    if (cfg.store_forests) {
      out.forests.push_back(forest);
      out.miss_forests.push_back(miss_forest);
    }
  }
  const double denom = std::max(1, stored);
  out.train_prediction_mean /= denom;
  out.y_tilde_mean /= denom;
  out.detection /= denom;
  out.interactions /= denom;
  out.miss_interactions /= denom;
  const long proposed = sampler.y_mis_proposed() - prop0;
  out.y_mis_acceptance =
      proposed > 0 ? static_cast<double>(sampler.y_mis_accepted() - acc0) / static_cast<double>(proposed) : 0.0;
  out.tree_acceptance =
      post_stats.proposed > 0 ? static_cast<double>(post_stats.accepted) / post_stats.proposed : 0.0;
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace detail

/// Fit missBART2. Missing covariates stay missing and are routed in-tree.
inline ChainOutput run_missbart2(const Dataset& data, const SamplerConfig& cfg, const PredictorMatrix* x_test = nullptr) {
  cfg.validate();
  check_dataset(data, "run_missbart2");
  if (x_test != nullptr) check_schema(*x_test, data.q(), "run_missbart2");
  std::vector<ChainOutput> parts;
  const Rng root(cfg.seed);
  for (int c = 0; c < cfg.chains; ++c) parts.push_back(detail::run_missbart2_chain(data, cfg, x_test, root.split(static_cast<std::uint64_t>(c))));
  return merge_chains(std::move(parts));
}

}  // namespace missbart
