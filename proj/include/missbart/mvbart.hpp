#pragma once

// Plain multivariate BART (no missingness model), used for the complete-case
// baselines: mvBART on rows with every response observed and univariate BART
// per response on rows where that response is observed.

#include <Eigen/Dense>

#include <chrono>
#include <vector>

#include "missbart/chain.hpp"
#include "missbart/data_model.hpp"
#include "missbart/errors.hpp"
#include "missbart/stats.hpp"
#include "missbart/tree.hpp"

namespace missbart {

namespace detail {

inline ChainOutput run_mvbart_chain(const Dataset& data, const SamplerConfig& cfg, const PredictorMatrix* x_test,
                                    Rng rng) {
  const auto start = std::chrono::steady_clock::now();
  Rng noise_rng = rng.split(0x6e6f697365ULL);
  ChainOutput out;
  out.model = "mvbart";
  out.n = data.n();
  out.p = data.p();
  out.q = data.q();
  out.config = cfg;
  out.x_names = data.x_names;
  out.y_names = data.y_names;
  out.x_train = data.x;
  out.scaler = ResponseScaler::fit(data.y);
  const MatrixXd y_s = out.scaler.transform(data.y);
  auto [node, omega_prior] = calibrate_priors(y_s, data.x, cfg.calibration());
  const SplitGrid grid = SplitGrid::from_columns(data.x);
  SumOfTrees ensemble(cfg.n_trees, data.n(), static_cast<int>(data.p()));
  ensemble.reset(ensemble.forest(), data.x);
  SpdMatrix omega(MatrixXd(omega_prior.lambda.cwiseInverse().asDiagonal()));

  out.train_prediction_mean = MatrixXd::Zero(data.n(), data.p());
  out.interactions = MatrixXd::Zero(data.q(), data.q());
  SweepStats stats;
  int stored = 0;
  for (int it = 0; it < cfg.burn_in + cfg.post_burn_in; ++it) {
    ensemble.sweep(data.x, grid, y_s, omega, node, cfg.tree_prior, rng, it >= cfg.burn_in ? &stats : nullptr);
    omega = update_omega(y_s, ensemble.fitted(), omega_prior, rng);
    if (!is_stored_iteration(it, cfg)) continue;
    ++stored;
    const Forest& forest = ensemble.forest();
    out.train_prediction_mean += out.scaler.inverse(ensemble.fitted());
    if (x_test != nullptr) {
      out.test_predictions.push_back(predict(forest, *x_test, &out.scaler));
      out.test_predictive.push_back(add_predictive_noise(out.test_predictions.back(), omega, out.scaler, noise_rng));
    }
    out.omega.push_back(omega.matrix());
    out.split_usage.push_back(split_counts(forest, static_cast<int>(data.q())));
    out.interactions += interaction_counts(forest, static_cast<int>(data.q()));
    if (cfg.store_forests) out.forests.push_back(forest);
  }
  out.train_prediction_mean /= std::max(1, stored);
  out.interactions /= std::max(1, stored);
  out.y_tilde_mean = y_s;
  out.tree_acceptance = stats.proposed > 0 ? static_cast<double>(stats.accepted) / stats.proposed : 0.0;
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace detail

/// Multivariate BART on fully observed responses.
inline ChainOutput run_mvbart(const Dataset& data, const SamplerConfig& cfg, const PredictorMatrix* x_test = nullptr) {
  cfg.validate();
  check_dataset(data, "run_mvbart");
  if (!data.y.allFinite()) throw DataError("run_mvbart: responses must be fully observed");
  if (x_test != nullptr) check_schema(*x_test, data.q(), "run_mvbart");
  std::vector<ChainOutput> parts;
  const Rng root(cfg.seed);
  for (int c = 0; c < cfg.chains; ++c) parts.push_back(detail::run_mvbart_chain(data, cfg, x_test, root.split(static_cast<std::uint64_t>(c))));
  return merge_chains(std::move(parts));
}

/// Rows whose responses are all observed.
inline std::vector<int> complete_rows(const MatrixXd& y) {
  std::vector<int> rows;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    if (y.row(i).allFinite()) rows.push_back(static_cast<int>(i));
  }
  return rows;
}

/// Complete-case multivariate BART.
inline ChainOutput run_mvbart_cc(const Dataset& data, const SamplerConfig& cfg, const PredictorMatrix* x_test = nullptr) {
  const std::vector<int> rows = complete_rows(data.y);
  if (rows.size() < 2) throw DataError("run_mvbart_cc: fewer than two complete rows");
  ChainOutput out = run_mvbart(subset_rows(data, rows), cfg, x_test);
  out.model = "mvbart_cc";
  return out;
}

struct TestDraws {
  std::vector<MatrixXd> mean;        // regression-function draws
  std::vector<MatrixXd> predictive;  // with residual noise
};

/// Test-set draws of univariate complete-case BART, one fit per response;
/// draw d of the result stacks draw d of every per-response fit.
inline TestDraws run_unibart_cc(const Dataset& data, const SamplerConfig& cfg, const PredictorMatrix& x_test) {
  TestDraws out;
  for (Eigen::Index j = 0; j < data.p(); ++j) {
    std::vector<int> rows;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      if (!std::isnan(data.y(i, j))) rows.push_back(static_cast<int>(i));
    }
    if (rows.size() < 2) throw DataError("run_unibart_cc: fewer than two observed values in a response");
    Dataset sub{take_rows(data.x, rows), MatrixXd(static_cast<Eigen::Index>(rows.size()), 1), data.x_names, {}};
    for (std::size_t k = 0; k < rows.size(); ++k) sub.y(static_cast<Eigen::Index>(k), 0) = data.y(rows[k], j);
    SamplerConfig c = cfg;
    c.seed = cfg.seed + 7919ULL * static_cast<std::uint64_t>(j + 1);
    c.store_forests = false;
    const ChainOutput fit = run_mvbart(sub, c, &x_test);
    if (out.mean.empty()) {
      out.mean.assign(fit.test_predictions.size(), MatrixXd(x_test.rows(), data.p()));
      out.predictive = out.mean;
    }
    for (std::size_t d = 0; d < out.mean.size(); ++d) {
      out.mean[d].col(j) = fit.test_predictions[d].col(0);
      out.predictive[d].col(j) = fit.test_predictive[d].col(0);
    }
  }
  return out;
}

}  // namespace missbart
