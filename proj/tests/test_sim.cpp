#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <vector>

#include "missbart/sim.hpp"
#include "test_util.hpp"

using namespace missbart;

namespace {

double friedman_at(std::vector<double> x) { return friedman(x.data()); }

double missing_fraction(const PredictorMatrix& x, Eigen::Index c) {
  return x.col(c).array().isNaN().cast<double>().mean();
}

const MetricRecord* find_record(const std::vector<MetricRecord>& rs, const std::string& model, const std::string& split,
                                const std::string& metric, int response) {
  for (const auto& r : rs) {
    if (r.model == model && r.split == split && r.metric == metric && r.response == response) return &r;
  }
  return nullptr;
}

}  // namespace

TEST(Friedman, HandEvaluations) {
  EXPECT_DOUBLE_EQ(friedman_at({0.0, 0.37, 0.5, 0.0, 0.0}), 0.0);
  EXPECT_NEAR(friedman_at({1.0, 0.5, 0.5, 1.0, 1.0}), 25.0, 1e-12);
  EXPECT_NEAR(friedman_at({0.5, 0.5, 0.5, 0.5, 0.5}), 5.0 * std::sqrt(2.0) + 7.5, 1e-12);
  EXPECT_NEAR(friedman_at({0.5, 0.5, 0.5, 0.5, 0.5}), 14.5711, 1e-4);
}

TEST(Friedman, UnivariateGeneratorNoiseless) {
  Rng rng(1);
  auto [x, y] = gen_friedman_uni(200, 0.0, rng);
  ASSERT_EQ(x.cols(), 5);
  for (Eigen::Index i = 0; i < 200; ++i) {
    EXPECT_DOUBLE_EQ(y(i, 0), friedman_at({x(i, 0), x(i, 1), x(i, 2), x(i, 3), x(i, 4)}));
  }
  EXPECT_TRUE((x.array() >= 0.0).all() && (x.array() < 1.0).all());
  EXPECT_THROW(gen_friedman_uni(0, 1.0, rng), DomainError);
}

TEST(Friedman, UnivariateNoiseVariance) {
  Rng rng(2);
  auto [x, y] = gen_friedman_uni(20000, 1.0, rng);
  std::vector<double> e;
  for (Eigen::Index i = 0; i < 20000; ++i) e.push_back(y(i, 0) - friedman_at({x(i, 0), x(i, 1), x(i, 2), x(i, 3), x(i, 4)}));
  EXPECT_NEAR(testutil::variance(e), 1.0, 0.04);
}

TEST(FriedmanMulti, ZeroCoefficientsGivePureNoise) {
  Rng rng(3);
  const MatrixXd cov = (MatrixXd(2, 2) << 1.0, 0.3, 0.3, 2.0).finished();
  auto [x, y] = gen_friedman_multi_fixed(10000, MatrixXd::Zero(2, 4), cov, rng);
  const Eigen::RowVectorXd m = y.colwise().mean();
  const MatrixXd c = (y.rowwise() - m).transpose() * (y.rowwise() - m) / 9999.0;
  EXPECT_LT((c - cov).cwiseAbs().maxCoeff(), 0.06);
}

TEST(FriedmanMulti, LinearTermReducesToX4) {
  Rng rng(4);
  MatrixXd xi = MatrixXd::Zero(3, 4);
  xi.col(2).setOnes();
  auto [x, y] = gen_friedman_multi_fixed(100, xi, MatrixXd(), rng);
  ASSERT_EQ(x.cols(), 10);
  for (Eigen::Index i = 0; i < 100; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(y(i, j), x(i, 3));
  }
}

TEST(FriedmanMulti, NoiseColumnsNeverEnterResponse) {
  Rng rng(5);
  const FriedmanMultiDraw d = gen_friedman_multi(300, 2, MatrixXd::Identity(2, 2), MatrixXd(), rng);
  for (Eigen::Index i = 0; i < 300; ++i) {
    const double* r = d.x.data() + i * 10;
    const Eigen::Vector4d terms(std::sin(std::numbers::pi * r[0] * r[1]), (r[2] - 0.5) * (r[2] - 0.5), r[3], r[4]);
    EXPECT_LT((d.y.row(i).transpose() - d.xi * terms).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ProbitMissingness, SymmetricLatentGivesHalf) {
  Rng rng(6);
  const MatrixXd y = MatrixXd::Random(10000, 2);
  const PredictorMatrix x = uniform_matrix(10000, 3, rng);
  const MissingnessDraw d =
      gen_missingness_probit(y, x, MechanismTarget::y_only, MatrixXd::Zero(3, 2), MatrixXd::Identity(2, 2), rng);
  for (Eigen::Index j = 0; j < 2; ++j) EXPECT_NEAR(d.m.col(j).cast<double>().mean(), 0.5, 0.015);
  EXPECT_TRUE((d.detection.array() == 0.5).all());
}

TEST(ProbitMissingness, LargeInterceptObservesAll) {
  Rng rng(7);
  const MatrixXd y = MatrixXd::Random(500, 2);
  const PredictorMatrix x = uniform_matrix(500, 3, rng);
  MatrixXd b = MatrixXd::Zero(4, 2);
  b.row(0).setConstant(40.0);
  const MissingnessDraw d = gen_missingness_probit(y, x, MechanismTarget::x_only, b, MatrixXd::Identity(2, 2), rng);
  EXPECT_EQ(d.m.sum(), 1000);
  EXPECT_THROW(gen_missingness_probit(y, x, MechanismTarget::x_and_y, b, MatrixXd::Identity(2, 2), rng), DomainError);
}

TEST(ProbitMissingness, DetectionMatchesLinearPredictor) {
  Rng rng(8);
  const MatrixXd y = MatrixXd::Random(50, 1);
  const PredictorMatrix x = uniform_matrix(50, 1, rng);
  const MatrixXd b = (MatrixXd(2, 1) << 0.2, 1.5).finished();
  const MissingnessDraw d =
      gen_missingness_probit(y, x, MechanismTarget::y_only, b, MatrixXd::Identity(1, 1), rng, false);
  for (Eigen::Index i = 0; i < 50; ++i) {
    EXPECT_NEAR(d.detection(i, 0), 0.5 * std::erfc(-(0.2 + 1.5 * y(i, 0)) / std::sqrt(2.0)), 1e-12);
  }
}

TEST(StepTreeMissingness, UShapeInteriorMissing) {
  Rng rng(9);
  auto [x, y] = gen_friedman_uni(5000, 1.0, rng);
  const MissingnessDraw d = gen_missingness_step_tree(y, {13.11, 20.66}, {0.85, 0.15, 0.85});
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const bool interior = y(i, 0) > 13.11 && y(i, 0) <= 20.66;
    EXPECT_EQ(d.m(i, 0) == 0, interior);
    EXPECT_EQ(d.m(i, 0) == 1, d.detection(i, 0) >= 0.5);
  }
}

TEST(StepTreeMissingness, UnitProbabilitiesObserveAll) {
  const MatrixXd y = VectorXd::LinSpaced(100, 0.0, 30.0);
  const MissingnessDraw d = gen_missingness_step_tree(y, {10.0, 20.0}, {1.0, 1.0, 1.0});
  EXPECT_EQ(d.m.sum(), 100);
  EXPECT_THROW(gen_missingness_step_tree(y, {20.0, 10.0}, {1.0, 1.0, 1.0}), DomainError);
  EXPECT_THROW(gen_missingness_step_tree(y, {10.0}, {1.0, 1.0, 1.0}), DomainError);
}

TEST(Ampute, ZeroProportionLeavesDataUnchanged) {
  Rng rng(10);
  const PredictorMatrix x = uniform_matrix(100, 4, rng);
  EXPECT_EQ(ampute_mar(x, AmputeSpec::diagonal(4, 0.0), rng), x);
}

TEST(Ampute, RejectsInvalidPatterns) {
  Rng rng(11);
  const PredictorMatrix x = uniform_matrix(20, 3, rng);
  AmputeSpec all;
  all.patterns = {{1, 1, 1}};
  EXPECT_THROW(ampute_mar(x, all, rng), DomainError);
  AmputeSpec none;
  none.patterns = {{0, 0, 0}};
  EXPECT_THROW(ampute_mar(x, none, rng), DomainError);
  AmputeSpec bad = AmputeSpec::diagonal(3, 1.5);
  EXPECT_THROW(ampute_mar(x, bad, rng), DomainError);
}

TEST(Ampute, DiagonalPatternsBlankFivePercentPerColumn) {
  Rng rng(12);
  const PredictorMatrix x = uniform_matrix(2000, 10, rng);
  const PredictorMatrix a = ampute_mar(x, AmputeSpec::diagonal(10, 0.5), rng);
  for (Eigen::Index c = 0; c < 10; ++c) {
    const double f = missing_fraction(a, c);
    EXPECT_GE(f, 0.0435);
    EXPECT_LE(f, 0.0565);
  }
  for (Eigen::Index i = 0; i < 2000; ++i) EXPECT_LE(a.row(i).array().isNaN().count(), 1);
}

TEST(Ampute, NeverInspectsBlankedColumn) {
  Rng rng(13);
  PredictorMatrix x = uniform_matrix(300, 3, rng);
  AmputeSpec spec;
  spec.prop = 0.4;
  spec.patterns = {{1, 0, 0}};
  PredictorMatrix permuted = x;
  for (Eigen::Index i = 0; i < 300; ++i) permuted(i, 0) = x((i * 7 + 3) % 300, 0);
  Rng a(14);
  Rng b(14);
  const PredictorMatrix ma = ampute_mar(x, spec, a);
  const PredictorMatrix mb = ampute_mar(permuted, spec, b);
  EXPECT_EQ(ma.array().isNaN().matrix(), mb.array().isNaN().matrix());
  EXPECT_NEAR(missing_fraction(ma, 0), 0.4, 1e-12);
}

TEST(Ampute, HigherScoresMoreOftenBlanked) {
  Rng rng(15);
  const PredictorMatrix x = uniform_matrix(4000, 2, rng);
  AmputeSpec spec;
  spec.prop = 0.3;
  spec.patterns = {{1, 0}};
  const PredictorMatrix a = ampute_mar(x, spec, rng);
  std::vector<double> hit;
  std::vector<double> score;
  for (Eigen::Index i = 0; i < 4000; ++i) {
    hit.push_back(std::isnan(a(i, 0)) ? 1.0 : 0.0);
    score.push_back(x(i, 1));
  }
  EXPECT_GT(testutil::correlation(hit, score), 0.1);
}

TEST(Fixtures, ObservedProportionsNearTargets) {
  for (const char* name : {"mar1.json", "mar2.json", "mnar1.json", "mnar2.json", "ushape.json", "nshape.json"}) {
    const SimRecipe r = load_recipe(testutil::fixture(name));
    ASSERT_EQ(r.target_observed.size(), r.p) << name;
    const GeneratedDataset g = generate(r, 1);
    const VectorXd f = g.observed_fraction();
    for (Eigen::Index j = 0; j < r.p; ++j) EXPECT_NEAR(f(j), r.target_observed(j), 0.03) << name << " response " << j;
  }
}

TEST(Fixtures, UShapeObservedFractionStableOverSeeds) {
  const SimRecipe r = load_recipe(testutil::fixture("ushape.json"));
  for (std::uint64_t seed = 1; seed <= 5; ++seed) EXPECT_NEAR(generate(r, seed).observed_fraction()(0), 0.551, 0.02);
}

TEST(Fixtures, FriedmanMultiAmputationBands) {
  const GeneratedDataset diag = generate(load_recipe(testutil::fixture("friedman_multi_diagonal.json")), 1);
  ASSERT_EQ(diag.x_amputed.cols(), 10);
  for (Eigen::Index c = 0; c < 10; ++c) {
    EXPECT_GE(missing_fraction(diag.x_amputed, c), 0.0435);
    EXPECT_LE(missing_fraction(diag.x_amputed, c), 0.0565);
  }
  const GeneratedDataset cx = generate(load_recipe(testutil::fixture("friedman_multi_complex.json")), 1);
  for (Eigen::Index c = 0; c < 10; ++c) {
    EXPECT_GE(missing_fraction(cx.x_amputed, c), 0.057) << c;
    EXPECT_LE(missing_fraction(cx.x_amputed, c), 0.3965) << c;
  }
  EXPECT_EQ(cx.y_complete.cols(), 5);
  EXPECT_LT(cx.m.sum(), cx.m.size());
}

TEST(Generate, ReproducibleFromRecipeAndSeed) {
  SimRecipe r = load_recipe(testutil::fixture("mnar2.json"));
  r.n = 200;
  const GeneratedDataset a = generate(r, 5);
  const GeneratedDataset b = generate(r, 5);
  const GeneratedDataset c = generate(r, 6);
  EXPECT_EQ(a.x_complete, b.x_complete);
  EXPECT_EQ(a.y_complete, b.y_complete);
  EXPECT_EQ(a.m, b.m);
  EXPECT_NE(a.y_complete, c.y_complete);
  EXPECT_FALSE(a.y_complete.array().isNaN().any());
  const Dataset obs = a.observed();
  for (Eigen::Index i = 0; i < 200; ++i) {
    for (Eigen::Index j = 0; j < 2; ++j) EXPECT_EQ(std::isnan(obs.y(i, j)), a.m(i, j) == 0);
  }
}

TEST(Generate, StructureSharedAcrossReplicates) {
  SimRecipe r = load_recipe(testutil::fixture("mar1.json"));
  r.n = 100;
  const Forest f = recipe_data_forest(r);
  const GeneratedDataset g = generate(r, 11);
  const MatrixXd mean = f.predict(g.x_complete);
  const MatrixXd resid = g.y_complete - mean;
  EXPECT_LT(resid.cwiseAbs().mean(), 1.5);
  EXPECT_EQ(recipe_data_forest(r).predict(g.x_complete), mean);
}

TEST(Recipe, RejectsMalformedInput) {
  nlohmann::json j = {{"schema_version", 1}, {"n", 50}, {"data", {{"generator", "friedman_uni"}}}};
  EXPECT_NO_THROW(recipe_from_json(j));
  auto bad = j;
  bad["schema_version"] = 2;
  EXPECT_THROW(recipe_from_json(bad), DataError);
  bad = j;
  bad["data"]["generator"] = "mystery";
  EXPECT_THROW(recipe_from_json(bad), DataError);
  bad = j;
  bad["missingness"] = {{"generator", "step_tree"}, {"thresholds", {1.0}}, {"leaf_probs", {1.0, 0.0}}, {"target", "Z"}};
  EXPECT_THROW(recipe_from_json(bad), DataError);
  bad = j;
  bad["target_observed"] = {1.5};
  EXPECT_THROW(recipe_from_json(bad), DomainError);
  EXPECT_THROW(load_recipe(testutil::fixture("does_not_exist.json")), DataError);
}

TEST(Recipe, StepTreeRecipeFromJson) {
  nlohmann::json j = {{"n", 400},
                      {"data", {{"generator", "friedman_uni"}, {"noise_sd", 0.0}}},
                      {"missingness", {{"generator", "step_tree"}, {"thresholds", {14.0}}, {"leaf_probs", {1.0, 0.0}}}}};
  const GeneratedDataset g = generate(recipe_from_json(j), 3);
  for (Eigen::Index i = 0; i < 400; ++i) EXPECT_EQ(g.m(i, 0) == 1, g.y_complete(i, 0) <= 14.0);
}

TEST(Folds, PartitionRowsExactly) {
  Rng rng(16);
  const auto folds = make_folds(2000, 4, rng);
  ASSERT_EQ(folds.size(), 4u);
  std::vector<int> all;
  for (const auto& f : folds) {
    EXPECT_EQ(f.size(), 500u);
    all.insert(all.end(), f.begin(), f.end());
  }
  std::sort(all.begin(), all.end());
  std::vector<int> expect(2000);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(all, expect);
  const auto odd = make_folds(11, 3, rng);
  EXPECT_EQ(odd[0].size() + odd[1].size() + odd[2].size(), 11u);
  EXPECT_THROW(make_folds(10, 1, rng), DomainError);
  EXPECT_THROW(make_folds(2, 3, rng), DomainError);
}

TEST(ThresholdMask, SelectsLowDetectionCells) {
  const MatrixXd d = (MatrixXd(2, 2) << 0.2, 0.9, 0.5, 1.0).finished();
  const CellMask m = threshold_mask(d, 0.5);
  EXPECT_TRUE(m(0, 0));
  EXPECT_FALSE(m(0, 1));
  EXPECT_TRUE(m(1, 0));
  EXPECT_EQ(threshold_mask(d, 1.0).count(), 4);
}

TEST(CvModels, NamesRoundTrip) {
  for (CvModel m : {CvModel::missbart1, CvModel::missbart2, CvModel::mvbart_cc, CvModel::unibart_cc, CvModel::oracle}) {
    EXPECT_EQ(parse_cv_model(to_string(m)), m);
  }
  EXPECT_THROW(parse_cv_model("ranger"), UsageError);
}

TEST(RunCv, OracleModelScoresZero) {
  SimRecipe r = load_recipe(testutil::fixture("mnar1.json"));
  r.n = 120;
  const GeneratedDataset g = generate(r, 2);
  Rng rng(17);
  const CvResult res = run_cv(g, {CvModel::oracle}, 4, SamplerConfig{}, rng);
  EXPECT_EQ(res.folds.size(), 4u);
  std::set<std::string> splits;
  for (const auto& rec : res.records) {
    EXPECT_EQ(rec.value, 0.0);
    splits.insert(rec.split);
  }
  EXPECT_EQ(splits, (std::set<std::string>{"missing", "observed", "combined"}));
  for (int f = 0; f < 4; ++f) {
    int n = 0;
    for (const auto& rec : res.records) n += rec.fold == f && rec.metric == "frobenius";
    EXPECT_EQ(n, 3);
  }
}

TEST(RunCv, CombinedSplitIsUnionOfCells) {
  SimRecipe r = load_recipe(testutil::fixture("mnar1.json"));
  r.n = 80;
  const GeneratedDataset g = generate(r, 3);
  SamplerConfig cfg;
  cfg.n_trees = 5;
  cfg.burn_in = 20;
  cfg.post_burn_in = 20;
  Rng rng(18);
  const CvResult res = run_cv(g, {CvModel::mvbart_cc}, 2, cfg, rng, 1);
  const auto* mis = find_record(res.records, "mvbart_cc", "missing", "frobenius", -1);
  const auto* obs = find_record(res.records, "mvbart_cc", "observed", "frobenius", -1);
  const auto* comb = find_record(res.records, "mvbart_cc", "combined", "frobenius", -1);
  ASSERT_TRUE(mis && obs && comb);
  EXPECT_NEAR(comb->value * comb->value, mis->value * mis->value + obs->value * obs->value, 1e-9);
  for (const auto& rec : res.records) EXPECT_EQ(rec.fold, 0);
}
