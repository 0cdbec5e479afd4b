#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "missbart/metrics.hpp"
#include "test_util.hpp"

using namespace missbart;

namespace {

double crps_brute(const std::vector<double>& s, double y) {
  const auto m = static_cast<double>(s.size());
  double a = 0.0;
  double b = 0.0;
  for (double u : s) {
    a += std::abs(u - y);
    for (double v : s) b += std::abs(u - v);
  }
  return a / m - 0.5 * b / (m * m);
}

Forest step_forest(double cut, double lo, double hi) {
  Forest f(1, 1);
  f.trees[0].grow(0, SplitRule{0, 0, cut, MissingDirection::left});
  f.trees[0].node(f.trees[0].node(0).left).mu = VectorXd::Constant(1, lo);
  f.trees[0].node(f.trees[0].node(0).right).mu = VectorXd::Constant(1, hi);
  return f;
}

}  // namespace

TEST(Rmse, Examples) {
  const MatrixXd t = MatrixXd::Zero(2, 1);
  EXPECT_EQ(rmse(t, t, full_mask(2, 1))(0), 0.0);
  CellMask one = CellMask::Constant(2, 1, false);
  one(0, 0) = true;
  EXPECT_DOUBLE_EQ(rmse((MatrixXd(2, 1) << 2.0, 9.0).finished(), t, one)(0), 2.0);
  EXPECT_DOUBLE_EQ(rmse((MatrixXd(2, 1) << 3.0, 4.0).finished(), t, full_mask(2, 1))(0), std::sqrt(12.5));
  EXPECT_NEAR(std::sqrt(12.5), 3.5355, 1e-4);
}

TEST(Rmse, EmptyMaskSignaled) {
  const MatrixXd t = MatrixXd::Zero(2, 2);
  EXPECT_THROW(rmse(t, t, CellMask::Constant(2, 2, false)), DomainError);
  CellMask col0 = CellMask::Constant(2, 2, false);
  col0.col(0).setConstant(true);
  const VectorXd r = rmse(t, t, col0);
  EXPECT_EQ(r(0), 0.0);
  EXPECT_TRUE(std::isnan(r(1)));
  EXPECT_THROW(rmse(t, MatrixXd::Zero(3, 2), col0), DomainError);
}

TEST(Frobenius, Examples) {
  const MatrixXd err = (MatrixXd(2, 2) << 3.0, 4.0, 0.0, 0.0).finished();
  const MatrixXd zero = MatrixXd::Zero(2, 2);
  EXPECT_DOUBLE_EQ(frobenius(err, zero, full_mask(2, 2)), 5.0);
  CellMask zero_cells = CellMask::Constant(2, 2, false);
  zero_cells.row(1).setConstant(true);
  EXPECT_EQ(frobenius(err, zero, zero_cells), 0.0);
}

TEST(Frobenius, RmseIdentity) {
  Rng rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    MatrixXd pred(7, 3);
    MatrixXd truth(7, 3);
    CellMask mask(7, 3);
    for (Eigen::Index i = 0; i < 7; ++i) {
      for (Eigen::Index j = 0; j < 3; ++j) {
        pred(i, j) = rng.normal();
        truth(i, j) = rng.normal();
        mask(i, j) = rng.uniform() < 0.6 || i == 0;
      }
    }
    const VectorXd r = rmse(pred, truth, mask);
    double ss = 0.0;
    for (Eigen::Index j = 0; j < 3; ++j) ss += static_cast<double>(mask.col(j).count()) * r(j) * r(j);
    EXPECT_NEAR(frobenius(pred, truth, mask) * frobenius(pred, truth, mask), ss, 1e-10);
    const MatrixXd p1 = pred.col(0);
    const MatrixXd t1 = truth.col(0);
    const CellMask m1 = mask.col(0);
    EXPECT_NEAR(frobenius(p1, t1, m1), rmse(p1, t1, m1)(0) * std::sqrt(static_cast<double>(m1.count())), 1e-12);
  }
}

TEST(Crps, Examples) {
  EXPECT_EQ(crps_cell({1.5, 1.5, 1.5}, 1.5), 0.0);
  EXPECT_DOUBLE_EQ(crps_cell({0.0, 2.0}, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(crps_cell({4.0, 4.0, 4.0, 4.0}, 1.5), 2.5);
  EXPECT_THROW(crps_cell({1.0}, 1.0), DomainError);
}

TEST(Crps, MatchesPairwiseEstimator) {
  Rng rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> s(2 + rep);
    for (double& v : s) v = rng.normal();
    const double y = rng.normal();
    EXPECT_NEAR(crps_cell(s, y), crps_brute(s, y), 1e-12);
    EXPECT_GE(crps_cell(s, y), 0.0);
  }
}

TEST(Crps, EmpiricalAveragesPerResponse) {
  const MatrixXd truth = (MatrixXd(2, 2) << 1.0, 0.0, 3.0, 0.0).finished();
  std::vector<MatrixXd> draws = {(MatrixXd(2, 2) << 0.0, 0.0, 3.0, 1.0).finished(),
                                 (MatrixXd(2, 2) << 2.0, 0.0, 3.0, -1.0).finished()};
  const VectorXd c = crps_empirical(draws, truth, full_mask(2, 2));
  EXPECT_DOUBLE_EQ(c(0), (0.5 + 0.0) / 2.0);
  EXPECT_DOUBLE_EQ(c(1), (0.0 + crps_brute({1.0, -1.0}, 0.0)) / 2.0);
  EXPECT_THROW(crps_empirical({truth}, truth, full_mask(2, 2)), DomainError);
}

TEST(Crps, ThinsToSampleCap) {
  std::vector<MatrixXd> draws;
  for (int k = 0; k < 1000; ++k) draws.push_back(MatrixXd::Constant(1, 1, k % 2 == 0 ? 0.0 : 10.0));
  const MatrixXd truth = MatrixXd::Zero(1, 1);
  // Every second draw kept: all zeros.
  EXPECT_EQ(crps_empirical(draws, truth, full_mask(1, 1), 500)(0), 0.0);
  EXPECT_NEAR(crps_empirical(draws, truth, full_mask(1, 1), 1000)(0), crps_brute(std::vector<double>{0.0, 10.0}, 0.0),
              1e-12);
}

TEST(PosteriorInterval, Examples) {
  std::vector<double> sym;
  for (int k = -100; k <= 100; ++k) sym.push_back(k * 0.01);
  const Interval a = posterior_interval(sym);
  EXPECT_FALSE(a.excludes_zero);
  EXPECT_NEAR(a.lower, -a.upper, 1e-12);
  std::vector<double> pos;
  for (int k = 1; k <= 150; ++k) pos.push_back(k * 0.1);
  EXPECT_TRUE(posterior_interval(pos).excludes_zero);
  std::vector<double> neg(pos);
  for (double& v : neg) v = -v;
  EXPECT_TRUE(posterior_interval(neg).excludes_zero);
  EXPECT_THROW(posterior_interval(std::vector<double>(99, 1.0)), DomainError);
  EXPECT_THROW(posterior_interval(pos, 1.0), DomainError);
}

TEST(PosteriorInterval, StandardNormalQuantiles) {
  Rng rng(3);
  std::vector<double> v;
  for (int k = 0; k < 10000; ++k) v.push_back(rng.normal());
  const Interval i = posterior_interval(v, 0.95);
  EXPECT_NEAR(i.lower, -1.959964, 0.05);
  EXPECT_NEAR(i.upper, 1.959964, 0.05);
}

TEST(PosteriorInterval, TypeSevenQuantile) {
  std::vector<double> v(101);
  for (int k = 0; k <= 100; ++k) v[static_cast<std::size_t>(k)] = k;
  const Interval i = posterior_interval(v, 0.95);
  EXPECT_NEAR(i.lower, 2.5, 1e-12);
  EXPECT_NEAR(i.upper, 97.5, 1e-12);
}

TEST(PosteriorInterval, ExclusionInvariantUnderPositiveRescaling) {
  Rng rng(4);
  std::vector<MatrixXd> draws;
  for (int k = 0; k < 400; ++k) draws.push_back((MatrixXd(1, 3) << rng.normal(), 4.0 + rng.normal(), -4.0 + rng.normal()).finished());
  const auto base = posterior_intervals(draws);
  std::vector<MatrixXd> scaled = draws;
  for (auto& d : scaled) d.col(1) *= 7.5;
  const auto s = posterior_intervals(scaled);
  ASSERT_EQ(base.size(), 1u);
  ASSERT_EQ(base[0].size(), 3u);
  for (int j = 0; j < 3; ++j) EXPECT_EQ(base[0][j].excludes_zero, s[0][j].excludes_zero);
  EXPECT_FALSE(base[0][0].excludes_zero);
  EXPECT_TRUE(base[0][1].excludes_zero);
  EXPECT_TRUE(base[0][2].excludes_zero);
}

TEST(PdpIce, ConstantModelGivesFlatCurves) {
  Forest f(2, 1);
  f.trees[0].node(0).mu = VectorXd::Constant(1, 0.4);
  f.trees[1].node(0).mu = VectorXd::Constant(1, -0.1);
  Rng rng(5);
  PredictorMatrix base(30, 2);
  for (Eigen::Index i = 0; i < 30; ++i) base.row(i) << rng.uniform(), rng.uniform();
  PdpRequest req;
  req.grid = {0.2, 0.5, 0.8};
  const std::vector<Forest> draws = {f};
  const PdpResult r = pdp_ice(draws, base, req, [](double v) { return v; });
  EXPECT_EQ(r.ice.rows(), 30);
  EXPECT_LT((r.ice.array() - 0.3).abs().maxCoeff(), 1e-12);
}

TEST(PdpIce, StepAtCutpoint) {
  const Forest f = step_forest(0.5, -1.0, 2.0);
  PredictorMatrix base(4, 1);
  base << 0.0, 0.3, 0.7, 1.0;
  PdpRequest req;
  req.grid = {0.1, 0.49, 0.5, 0.51, 0.9};
  const std::vector<Forest> draws = {f};
  const PdpResult r = pdp_ice(draws, base, req, [](double v) { return v; });
  const std::vector<double> expect = {-1.0, -1.0, -1.0, 2.0, 2.0};
  for (int k = 0; k < 5; ++k) EXPECT_DOUBLE_EQ(r.pdp(k), expect[static_cast<std::size_t>(k)]);
}

TEST(PdpIce, PdpIsMeanOfIceAndDrawOrderInvariant) {
  Rng rng(6);
  std::vector<Forest> draws = {step_forest(0.3, 0.0, 1.0), step_forest(0.6, 2.0, -1.0), step_forest(0.45, 0.5, 0.7)};
  PredictorMatrix base(80, 1);
  for (Eigen::Index i = 0; i < 80; ++i) base(i, 0) = rng.uniform();
  PdpRequest req;
  req.grid = {0.35, 0.5, 0.65};
  req.type = CurveType::detection_pdp;
  req.ice_rows = 20;
  auto link = [](double v) { return norm_cdf(v); };
  const PdpResult a = pdp_ice(draws, base, req, link);
  EXPECT_EQ(a.rows.size(), 20u);
  EXPECT_LT((a.pdp - a.ice.colwise().mean().transpose()).cwiseAbs().maxCoeff(), 1e-15);
  std::reverse(draws.begin(), draws.end());
  const PdpResult b = pdp_ice(draws, base, req, link);
  EXPECT_LT((a.pdp - b.pdp).cwiseAbs().maxCoeff(), 1e-12);
  const double oracle = (norm_cdf(1.0) + norm_cdf(2.0) + norm_cdf(0.7)) / 3.0;
  EXPECT_NEAR(a.pdp(1), oracle, 1e-12);
}

TEST(PdpIce, RowOrderInvariantWithoutSubsampling) {
  const std::vector<Forest> draws = {step_forest(0.5, -1.0, 2.0)};
  PredictorMatrix base(3, 2);
  base << 0.1, 0.0, 0.9, 1.0, 0.4, 0.5;
  PredictorMatrix flipped = base.colwise().reverse();
  PdpRequest req;
  req.grid = {0.2, 0.8};
  const auto id = [](double v) { return v; };
  EXPECT_EQ(pdp_ice(draws, base, req, id).pdp, pdp_ice(draws, flipped, req, id).pdp);
}

TEST(PdpIce, RejectsBadRequests) {
  const std::vector<Forest> draws = {step_forest(0.5, -1.0, 2.0)};
  PredictorMatrix base(2, 1);
  base << 0.2, 0.8;
  PdpRequest req;
  req.grid = {0.9};
  const auto id = [](double v) { return v; };
  EXPECT_THROW(pdp_ice(draws, base, req, id), DomainError);
  req.grid = {0.5};
  req.var = 1;
  EXPECT_THROW(pdp_ice(draws, base, req, id), DomainError);
  req.var = 0;
  req.response = 1;
  EXPECT_THROW(pdp_ice(draws, base, req, id), DomainError);
  EXPECT_THROW(pdp_ice(std::vector<Forest>{}, base, PdpRequest{}, id), DomainError);
}
