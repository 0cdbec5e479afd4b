#pragma once

// Evaluation metrics over masked cells and interpretation summaries computed
// from stored posterior draws.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "missbart/errors.hpp"
#include "missbart/stats.hpp"
#include "missbart/tree.hpp"

namespace missbart {

using CellMask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline CellMask full_mask(Eigen::Index rows, Eigen::Index cols) { return CellMask::Constant(rows, cols, true); }

namespace detail {

inline void check_shapes(const MatrixXd& pred, const MatrixXd& truth, const CellMask& mask, const char* who) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols() || mask.rows() != truth.rows() ||
      mask.cols() != truth.cols()) {
    throw DomainError(std::string(who) + ": shape mismatch");
  }
}

}  // namespace detail

/// Per-column root mean squared error over masked cells; columns without
/// masked cells are NaN. An entirely empty mask is an error.
inline VectorXd rmse(const MatrixXd& pred, const MatrixXd& truth, const CellMask& mask) {
  detail::check_shapes(pred, truth, mask, "rmse");
  if (mask.count() == 0) throw DomainError("rmse: empty mask");
  VectorXd out(truth.cols());
  for (Eigen::Index j = 0; j < truth.cols(); ++j) {
    double ss = 0.0;
    int count = 0;
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
      if (!mask(i, j)) continue;
      const double e = pred(i, j) - truth(i, j);
      ss += e * e;
      ++count;
    }
    out(j) = count > 0 ? std::sqrt(ss / count) : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

/// Square root of the summed squared error over masked cells.
inline double frobenius(const MatrixXd& pred, const MatrixXd& truth, const CellMask& mask) {
  detail::check_shapes(pred, truth, mask, "frobenius");
  double ss = 0.0;
  for (Eigen::Index j = 0; j < truth.cols(); ++j) {
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
      if (mask(i, j)) ss += (pred(i, j) - truth(i, j)) * (pred(i, j) - truth(i, j));
    }
  }
  return std::sqrt(ss);
}

/// Sample CRPS of one cell: mean|s - y| - mean|s - s'| / 2, the pair mean taken
/// over all ordered pairs with replacement. Uses the sorted-sample identity
/// sum_{a,b}|s_a - s_b| = 2 sum_i (2i - m - 1) s_(i).
inline double crps_cell(std::vector<double> samples, double y) {
  const auto m = static_cast<double>(samples.size());
  if (samples.size() < 2) throw DomainError("crps: need at least two samples");
  std::sort(samples.begin(), samples.end());
  double abs_err = 0.0;
  double pair = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    abs_err += std::abs(samples[i] - y);
    pair += (2.0 * static_cast<double>(i + 1) - m - 1.0) * samples[i];
  }
  return abs_err / m - pair / (m * m);
}

/// Per-response mean over masked cells of the per-cell CRPS. At most
/// `max_samples` draws are used per cell, evenly thinned.
inline VectorXd crps_empirical(const std::vector<MatrixXd>& draws, const MatrixXd& truth, const CellMask& mask,
                               std::size_t max_samples = 500) {
  if (draws.size() < 2) throw DomainError("crps_empirical: need at least two draws");
  detail::check_shapes(draws.front(), truth, mask, "crps_empirical");
  std::vector<std::size_t> use;
  const std::size_t m = std::min(max_samples, draws.size());
  for (std::size_t k = 0; k < m; ++k) use.push_back(k * draws.size() / m);
  VectorXd out(truth.cols());
  std::vector<double> s(use.size());
  for (Eigen::Index j = 0; j < truth.cols(); ++j) {
    double total = 0.0;
    int count = 0;
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
      if (!mask(i, j)) continue;
      for (std::size_t k = 0; k < use.size(); ++k) s[k] = draws[use[k]](i, j);
      total += crps_cell(s, truth(i, j));
      ++count;
    }
    out(j) = count > 0 ? total / count : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  bool excludes_zero = false;
};

/// Linear-interpolation sample quantile of sorted data (Hyndman-Fan type 7).
inline double sorted_quantile(const std::vector<double>& sorted, double prob) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Equal-tailed posterior interval at `level`.
inline Interval posterior_interval(std::vector<double> draws, double level = 0.95) {
  if (draws.size() < 100) throw DomainError("posterior_interval: need at least 100 draws");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("posterior_interval: level must lie in (0, 1)");
  std::sort(draws.begin(), draws.end());
  Interval out;
  out.lower = sorted_quantile(draws, 0.5 * (1.0 - level));
  out.upper = sorted_quantile(draws, 0.5 * (1.0 + level));
  out.excludes_zero = out.lower > 0.0 || out.upper < 0.0;
  return out;
}

/// Entry-wise intervals of matrix-valued draws, returned as a rows x cols table.
inline std::vector<std::vector<Interval>> posterior_intervals(const std::vector<MatrixXd>& draws, double level = 0.95) {
  if (draws.empty()) throw DomainError("posterior_intervals: no draws");
  const Eigen::Index rows = draws.front().rows();
  const Eigen::Index cols = draws.front().cols();
  std::vector<std::vector<Interval>> out(static_cast<std::size_t>(rows), std::vector<Interval>(static_cast<std::size_t>(cols)));
  std::vector<double> v(draws.size());
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (std::size_t d = 0; d < draws.size(); ++d) v[d] = draws[d](i, j);
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = posterior_interval(v, level);
    }
  }
  return out;
}

//==============================================================================
// Partial dependence

enum class CurveType : std::uint8_t { pdp, ice, detection_pdp, detection_ice };

struct PdpRequest {
  int var = 0;
  std::vector<double> grid;
  int response = 0;
  CurveType type = CurveType::pdp;
  int ice_rows = 50;
  std::uint64_t seed = 17;
};

struct PdpResult {
  std::vector<int> rows;  // base rows used for ICE curves
  MatrixXd ice;           // rows x grid
  VectorXd pdp;           // grid
};

/// ICE curves: for each selected base row, the posterior mean (over forest
/// draws) of link(forest output) with column `var` set to each grid value.
/// The PDP is the mean of the ICE curves.
inline PdpResult pdp_ice(std::span<const Forest> draws, const PredictorMatrix& base, const PdpRequest& req,
                         const std::function<double(double)>& link) {
  if (draws.empty()) throw DomainError("pdp_ice: need stored forest draws");
  if (req.var < 0 || req.var >= base.cols()) throw DomainError("pdp_ice: variable out of range");
  if (req.grid.empty()) throw DomainError("pdp_ice: empty grid");
  if (req.response < 0 || req.response >= draws.front().response_dim) throw DomainError("pdp_ice: response out of range");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (Eigen::Index r = 0; r < base.rows(); ++r) {
    const double v = base(r, req.var);
    if (std::isnan(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double g : req.grid) {
    if (g < lo || g > hi) throw DomainError("pdp_ice: grid value outside the observed range of the variable");
  }
  PdpResult out;
  const auto n = static_cast<int>(base.rows());
  out.rows.resize(static_cast<std::size_t>(n));
  std::iota(out.rows.begin(), out.rows.end(), 0);
  if (req.ice_rows > 0 && n > req.ice_rows) {
    Rng rng(req.seed);
    std::shuffle(out.rows.begin(), out.rows.end(), rng.engine());
    out.rows.resize(static_cast<std::size_t>(req.ice_rows));
    std::sort(out.rows.begin(), out.rows.end());
  }
  const auto g = static_cast<Eigen::Index>(req.grid.size());
  out.ice = MatrixXd::Zero(static_cast<Eigen::Index>(out.rows.size()), g);
  std::vector<double> row(static_cast<std::size_t>(base.cols()));
  for (std::size_t r = 0; r < out.rows.size(); ++r) {
    const double* src = base.data() + static_cast<Eigen::Index>(out.rows[r]) * base.cols();
    std::copy(src, src + base.cols(), row.begin());
    for (Eigen::Index k = 0; k < g; ++k) {
      row[static_cast<std::size_t>(req.var)] = req.grid[static_cast<std::size_t>(k)];
      double acc = 0.0;
      for (const Forest& f : draws) acc += link(f.predict_row(row.data())(req.response));
      out.ice(static_cast<Eigen::Index>(r), k) = acc / static_cast<double>(draws.size());
    }
  }
  out.pdp = out.ice.colwise().mean().transpose();
  return out;
}

}  // namespace missbart
