#pragma once

// Data and missingness generators for the simulation studies, declarative
// recipes loaded from fixture files, covariate amputation and the
// cross-validation protocol.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "missbart/chain.hpp"
#include "missbart/data_model.hpp"
#include "missbart/errors.hpp"
#include "missbart/metrics.hpp"
#include "missbart/missbart1.hpp"
#include "missbart/missbart2.hpp"
#include "missbart/mvbart.hpp"
#include "missbart/stats.hpp"
#include "missbart/tree.hpp"

namespace missbart {

//==============================================================================
// Data generators

inline double friedman(const double* x) {
  return 10.0 * std::sin(std::numbers::pi * x[0] * x[1]) + 20.0 * (x[2] - 0.5) * (x[2] - 0.5) + 10.0 * x[3] +
         5.0 * x[4];
}

inline PredictorMatrix uniform_matrix(Eigen::Index n, Eigen::Index q, Rng& rng) {
  PredictorMatrix x(n, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < q; ++c) x(i, c) = rng.uniform();
  }
  return x;
}

/// X: n x 5 Unif(0,1); Y = Friedman(X) + N(0, noise_sd^2).
inline std::pair<PredictorMatrix, MatrixXd> gen_friedman_uni(Eigen::Index n, double noise_sd, Rng& rng) {
  if (n < 1) throw DomainError("gen_friedman_uni: n must be >= 1");
  PredictorMatrix x = uniform_matrix(n, 5, rng);
  MatrixXd y(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) y(i, 0) = friedman(x.data() + i * 5) + noise_sd * rng.normal();
  return {std::move(x), std::move(y)};
}

/// Multivariate Friedman response with coefficient vectors xi (p x 4, one
/// column per term) and noise N_p(0, noise_cov). X has 10 columns; the last
/// five are non-informative.
inline std::pair<PredictorMatrix, MatrixXd> gen_friedman_multi_fixed(Eigen::Index n, const MatrixXd& xi,
                                                                     const MatrixXd& noise_cov, Rng& rng) {
  const Eigen::Index p = xi.rows();
  if (p < 1 || xi.cols() != 4) throw DomainError("gen_friedman_multi: xi must be p x 4");
  PredictorMatrix x = uniform_matrix(n, 10, rng);
  MatrixXd y(n, p);
  const bool noisy = noise_cov.size() > 0 && noise_cov.cwiseAbs().maxCoeff() > 0.0;
  MatrixXd l;
  if (noisy) l = SpdMatrix(noise_cov).lower();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* r = x.data() + i * 10;
    Eigen::Vector4d terms(std::sin(std::numbers::pi * r[0] * r[1]), (r[2] - 0.5) * (r[2] - 0.5), r[3], r[4]);
    VectorXd yi = xi * terms;
    if (noisy) yi += l * standard_normal_vector(p, rng);
    y.row(i) = yi.transpose();
  }
  return {std::move(x), std::move(y)};
}

struct FriedmanMultiDraw {
  PredictorMatrix x;
  MatrixXd y;
  MatrixXd xi;  // p x 4
};

inline FriedmanMultiDraw gen_friedman_multi(Eigen::Index n, Eigen::Index p, const MatrixXd& coef_cov,
                                            const MatrixXd& noise_cov, Rng& rng) {
  if (p < 1) throw DomainError("gen_friedman_multi: p must be >= 1");
  MatrixXd xi(p, 4);
  const SpdMatrix c(coef_cov);
  for (int k = 0; k < 4; ++k) xi.col(k) = sample_mvn(VectorXd::Zero(p), c, rng);
  auto [x, y] = gen_friedman_multi_fixed(n, xi, noise_cov, rng);
  return {std::move(x), std::move(y), std::move(xi)};
}

/// Random forest from the tree prior on a Unif(0,1) cutpoint grid of `grid_size`
/// points per predictor, with N_p(0, leaf_sd^2 I) leaves.
inline Forest draw_prior_forest(int n_trees, Eigen::Index q, Eigen::Index p, double leaf_sd, const TreePrior& prior,
                                int grid_size, Rng& rng) {
  std::vector<std::vector<double>> cuts(static_cast<std::size_t>(q));
  for (auto& c : cuts) {
    for (int k = 1; k <= grid_size; ++k) c.push_back(static_cast<double>(k) / (grid_size + 1));
  }
  const SplitGrid grid(std::move(cuts));
  Forest forest(n_trees, static_cast<int>(p));
  for (auto& tree : forest.trees) {
    tree = draw_prior_tree(grid, prior, static_cast<int>(p), rng);
    for (int id = 0; id < tree.size(); ++id) {
      if (tree.node(id).is_leaf()) tree.node(id).mu = leaf_sd * standard_normal_vector(p, rng);
    }
  }
  return forest;
}

/// Y = forest(X) + N_p(0, noise_cov) with X ~ Unif(0,1)^q.
inline std::pair<PredictorMatrix, MatrixXd> gen_bart_draw(Eigen::Index n, const Forest& forest, Eigen::Index q,
                                                          const MatrixXd& noise_cov, Rng& rng) {
  PredictorMatrix x = uniform_matrix(n, q, rng);
  MatrixXd y = forest.predict(x);
  const MatrixXd l = SpdMatrix(noise_cov).lower();
  for (Eigen::Index i = 0; i < n; ++i) y.row(i) += (l * standard_normal_vector(y.cols(), rng)).transpose();
  return {std::move(x), std::move(y)};
}

//==============================================================================
// Missingness generators

enum class MechanismTarget : std::uint8_t { x_only, y_only, x_and_y };

struct MissingnessDraw {
  Eigen::MatrixXi m;
  MatrixXd detection;  // P(M = 1 | predictors)
};

/// Predictors driving missingness for a target, optionally z-scored per column.
inline MatrixXd missingness_predictors(const MatrixXd& y, const PredictorMatrix& x, MechanismTarget target,
                                       bool standardize) {
  MatrixXd w;
  switch (target) {
    case MechanismTarget::x_only: w = x; break;
    case MechanismTarget::y_only: w = y; break;
    case MechanismTarget::x_and_y:
      w.resize(y.rows(), x.cols() + y.cols());
      w << MatrixXd(x), y;
      break;
  }
  if (standardize) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      const double mean = w.col(c).mean();
      const double sd = std::sqrt((w.col(c).array() - mean).square().sum() / std::max<double>(1.0, static_cast<double>(w.rows() - 1)));
      w.col(c) = (w.col(c).array() - mean) / (sd > 0.0 ? sd : 1.0);
    }
  }
  return w;
}

/// Multivariate probit: latent = [1, W] B + N_p(0, R); observed iff latent > 0.
inline MissingnessDraw gen_missingness_probit(const MatrixXd& y, const PredictorMatrix& x, MechanismTarget target,
                                              const MatrixXd& b_sim, const MatrixXd& r_sim, Rng& rng,
                                              bool standardize = true) {
  const MatrixXd w = missingness_predictors(y, x, target, standardize);
  if (b_sim.rows() != w.cols() + 1 || b_sim.cols() != y.cols()) {
    throw DomainError("gen_missingness_probit: B_sim must be (1 + #predictors) x p");
  }
  MatrixXd z(w.rows(), w.cols() + 1);
  z << VectorXd::Ones(w.rows()), w;
  const MatrixXd mean = z * b_sim;
  const SpdMatrix r(r_sim);
  const MatrixXd l = r.lower();
  MissingnessDraw out{Eigen::MatrixXi(y.rows(), y.cols()), MatrixXd(y.rows(), y.cols())};
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const VectorXd latent = mean.row(i).transpose() + l * standard_normal_vector(y.cols(), rng);
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      out.m(i, j) = latent(j) > 0.0 ? 1 : 0;
      out.detection(i, j) = norm_cdf(mean(i, j) / std::sqrt(r_sim(j, j)));
    }
  }
  return out;
}

/// Probit BART missingness: latent = offset + sum of trees(W) + N_p(0, I).
inline MissingnessDraw gen_missingness_trees(const MatrixXd& y, const PredictorMatrix& x, MechanismTarget target,
                                             const Forest& trees, const VectorXd& offset, Rng& rng,
                                             bool standardize = true) {
  const PredictorMatrix w = missingness_predictors(y, x, target, standardize);
  MatrixXd mean = trees.predict(w);
  mean.rowwise() += offset.transpose();
  MissingnessDraw out{Eigen::MatrixXi(y.rows(), y.cols()), MatrixXd(y.rows(), y.cols())};
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      out.m(i, j) = mean(i, j) + rng.normal() > 0.0 ? 1 : 0;
      out.detection(i, j) = norm_cdf(mean(i, j));
    }
  }
  return out;
}

/// Single-response step tree: interval k = #thresholds strictly below y gets
/// leaf_probs[k]; cells with detection probability below 0.5 are missing.
inline MissingnessDraw gen_missingness_step_tree(const MatrixXd& y, const std::vector<double>& thresholds,
                                                 const std::vector<double>& leaf_probs) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) throw DomainError("step tree: thresholds must be sorted");
  if (leaf_probs.size() != thresholds.size() + 1) throw DomainError("step tree: need one probability per interval");
  MissingnessDraw out{Eigen::MatrixXi(y.rows(), y.cols()), MatrixXd(y.rows(), y.cols())};
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      const auto k = std::lower_bound(thresholds.begin(), thresholds.end(), y(i, j)) - thresholds.begin();
      const double prob = leaf_probs[static_cast<std::size_t>(k)];
      out.detection(i, j) = prob;
      out.m(i, j) = prob < 0.5 ? 0 : 1;
    }
  }
  return out;
}

//==============================================================================
// Covariate amputation

struct AmputeSpec {
  double prop = 0.5;
  std::vector<std::vector<int>> patterns;  // 1 marks a column to blank
  std::vector<double> freq;                // pattern frequencies; empty = equal
  std::vector<std::vector<double>> weights;  // score weights; empty = 1 on kept columns

  static AmputeSpec diagonal(Eigen::Index q, double prop) {
    AmputeSpec s;
    s.prop = prop;
    for (Eigen::Index c = 0; c < q; ++c) {
      std::vector<int> pat(static_cast<std::size_t>(q), 0);
      pat[static_cast<std::size_t>(c)] = 1;
      s.patterns.push_back(std::move(pat));
    }
    return s;
  }
};

/// MAR amputation. Rows are split at random into pattern groups by frequency;
/// within a group, round(prop * size) rows are blanked, chosen by weighted
/// sampling without replacement with weight Phi(standardized score). The score
/// uses only the columns the pattern keeps, so blanked values never matter.
inline PredictorMatrix ampute_mar(const PredictorMatrix& x, const AmputeSpec& spec, Rng& rng) {
  const Eigen::Index n = x.rows();
  const Eigen::Index q = x.cols();
  if (!(spec.prop >= 0.0 && spec.prop <= 1.0)) throw DomainError("ampute: prop must lie in [0, 1]");
  if (spec.patterns.empty()) throw DomainError("ampute: need at least one pattern");
  for (const auto& pat : spec.patterns) {
    if (static_cast<Eigen::Index>(pat.size()) != q) throw DomainError("ampute: pattern length must equal #columns");
    const auto blanks = std::count(pat.begin(), pat.end(), 1);
    if (blanks == q) throw DomainError("ampute: a pattern may not blank every column");
    if (blanks == 0) throw DomainError("ampute: a pattern must blank at least one column");
  }
  PredictorMatrix out = x;
  if (spec.prop == 0.0) return out;
  const std::size_t k = spec.patterns.size();
  std::vector<double> freq = spec.freq.empty() ? std::vector<double>(k, 1.0 / static_cast<double>(k)) : spec.freq;
  if (freq.size() != k) throw DomainError("ampute: one frequency per pattern");
  const double fsum = std::accumulate(freq.begin(), freq.end(), 0.0);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::size_t begin = 0;
  double cum = 0.0;
  for (std::size_t g = 0; g < k; ++g) {
    cum += freq[g] / fsum;
    const auto end = g + 1 == k ? static_cast<std::size_t>(n) : static_cast<std::size_t>(std::llround(cum * static_cast<double>(n)));
    const std::vector<int> group(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end));
    begin = end;
    if (group.empty()) continue;
    const auto& pat = spec.patterns[g];
    std::vector<double> w(static_cast<std::size_t>(q), 0.0);
    for (Eigen::Index c = 0; c < q; ++c) {
      if (pat[static_cast<std::size_t>(c)] == 1) continue;
      w[static_cast<std::size_t>(c)] = spec.weights.empty() ? 1.0 : spec.weights[g][static_cast<std::size_t>(c)];
    }
    std::vector<double> score(group.size(), 0.0);
    for (std::size_t r = 0; r < group.size(); ++r) {
      for (Eigen::Index c = 0; c < q; ++c) {
        if (w[static_cast<std::size_t>(c)] != 0.0) score[r] += w[static_cast<std::size_t>(c)] * x(group[r], c);
      }
    }
    const double mean = std::accumulate(score.begin(), score.end(), 0.0) / static_cast<double>(score.size());
    double var = 0.0;
    for (double s : score) var += (s - mean) * (s - mean);
    const double sd = score.size() > 1 ? std::sqrt(var / static_cast<double>(score.size() - 1)) : 0.0;
    const auto take = static_cast<std::size_t>(std::llround(spec.prop * static_cast<double>(group.size())));
    std::vector<std::pair<double, int>> keys;
    for (std::size_t r = 0; r < group.size(); ++r) {
      const double weight = std::max(norm_cdf(sd > 0.0 ? (score[r] - mean) / sd : 0.0), 1e-300);
      keys.emplace_back(std::log(rng.uniform()) / weight, group[r]);
    }
    std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; r < take; ++r) {
      for (Eigen::Index c = 0; c < q; ++c) {
        if (pat[static_cast<std::size_t>(c)] == 1) out(keys[r].second, c) = kNaN;
      }
    }
  }
  return out;
}

//==============================================================================
// Recipes

enum class DataGenerator : std::uint8_t { friedman_uni, friedman_multi, bart_draw };
enum class MissGenerator : std::uint8_t { none, probit_reg, probit_bart_trees, step_tree };

struct SimRecipe {
  int schema_version = 1;
  std::string name;
  std::string note;
  Eigen::Index n = 2000;
  Eigen::Index p = 1;
  Eigen::Index q = 5;
  std::uint64_t structure_seed = 1;
  DataGenerator data = DataGenerator::friedman_uni;
  double noise_sd = 1.0;
  MatrixXd noise_cov;
  MatrixXd coef_cov;
  int data_trees = 8;
  double leaf_sd = 1.0;
  MissGenerator miss = MissGenerator::none;
  MechanismTarget target = MechanismTarget::y_only;
  bool standardize = true;
  MatrixXd b_sim;
  MatrixXd r_sim;
  Forest miss_trees;
  VectorXd offset;
  std::vector<double> thresholds;
  std::vector<double> leaf_probs;
  bool amputate = false;
  AmputeSpec ampute;
  VectorXd target_observed;  // annotation: published observed proportions

  void validate() const {
    if (n < 2 || p < 1 || q < 1) throw DomainError("SimRecipe: need n >= 2, p >= 1, q >= 1");
    if (data == DataGenerator::friedman_uni && (p != 1 || q != 5)) throw DomainError("SimRecipe: friedman_uni has p = 1, q = 5");
    if (data == DataGenerator::friedman_multi && q != 10) throw DomainError("SimRecipe: friedman_multi has q = 10");
    if (miss == MissGenerator::step_tree && p != 1) throw DomainError("SimRecipe: step_tree needs p = 1");
    if (miss == MissGenerator::probit_reg && (r_sim.rows() != p || r_sim.cols() != p)) {
      throw DomainError("SimRecipe: probit_reg needs a p x p correlation");
    }
    if (target_observed.size() > 0 && ((target_observed.array() < 0).any() || (target_observed.array() > 1).any())) {
      throw DomainError("SimRecipe: proportions must lie in [0, 1]");
    }
  }
};

struct GeneratedDataset {
  PredictorMatrix x_complete;
  MatrixXd y_complete;
  Eigen::MatrixXi m;
  MatrixXd detection;
  PredictorMatrix x_amputed;  // empty when no amputation
  std::vector<std::string> x_names;
  std::vector<std::string> y_names;

  [[nodiscard]] const PredictorMatrix& x() const { return x_amputed.size() > 0 ? x_amputed : x_complete; }

  /// Observed data: Y with NaN where M = 0, and the (possibly amputed) X.
  [[nodiscard]] Dataset observed() const {
    MatrixXd y = y_complete;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      for (Eigen::Index j = 0; j < y.cols(); ++j) {
        if (m(i, j) == 0) y(i, j) = kNaN;
      }
    }
    return Dataset{x(), std::move(y), x_names, y_names};
  }

  [[nodiscard]] VectorXd observed_fraction() const {
    return m.cast<double>().colwise().mean().transpose();
  }
};

inline std::vector<std::string> default_names(const std::string& stem, Eigen::Index k) {
  std::vector<std::string> out;
  for (Eigen::Index i = 1; i <= k; ++i) out.push_back(stem + std::to_string(i));
  return out;
}

/// Forest used as the data-generating function of a bart_draw recipe.
inline Forest recipe_data_forest(const SimRecipe& r) {
  Rng rng(r.structure_seed, 0x64617461ULL);
  return draw_prior_forest(r.data_trees, r.q, r.p, r.leaf_sd, TreePrior{}, 99, rng);
}

inline MatrixXd recipe_xi(const SimRecipe& r) {
  Rng rng(r.structure_seed, 0x7869ULL);
  MatrixXd xi(r.p, 4);
  const SpdMatrix c(r.coef_cov);
  for (int k = 0; k < 4; ++k) xi.col(k) = sample_mvn(VectorXd::Zero(r.p), c, rng);
  return xi;
}

/// Complete data and missingness for one replicate. The generating structure
/// (data forest or Friedman coefficients) depends only on the recipe's
/// structure seed, so replicates share one data-generating process.
inline GeneratedDataset generate(const SimRecipe& r, std::uint64_t seed) {
  r.validate();
  const Rng root(seed);
  Rng data_rng = root.split(1);
  Rng miss_rng = root.split(2);
  Rng amp_rng = root.split(3);
  GeneratedDataset g;
  switch (r.data) {
    case DataGenerator::friedman_uni: {
      auto [x, y] = gen_friedman_uni(r.n, r.noise_sd, data_rng);
      g.x_complete = std::move(x);
      g.y_complete = std::move(y);
      break;
    }
    case DataGenerator::friedman_multi: {
      auto [x, y] = gen_friedman_multi_fixed(r.n, recipe_xi(r), r.noise_cov, data_rng);
      g.x_complete = std::move(x);
      g.y_complete = std::move(y);
      break;
    }
    case DataGenerator::bart_draw: {
      auto [x, y] = gen_bart_draw(r.n, recipe_data_forest(r), r.q, r.noise_cov, data_rng);
      g.x_complete = std::move(x);
      g.y_complete = std::move(y);
      break;
    }
  }
  MissingnessDraw md;
  switch (r.miss) {
    case MissGenerator::none:
      md.m = Eigen::MatrixXi::Ones(r.n, r.p);
      md.detection = MatrixXd::Ones(r.n, r.p);
      break;
    case MissGenerator::probit_reg:
      md = gen_missingness_probit(g.y_complete, g.x_complete, r.target, r.b_sim, r.r_sim, miss_rng, r.standardize);
      break;
    case MissGenerator::probit_bart_trees:
      md = gen_missingness_trees(g.y_complete, g.x_complete, r.target, r.miss_trees,
                                 r.offset.size() == r.p ? r.offset : VectorXd(VectorXd::Zero(r.p)), miss_rng,
                                 r.standardize);
      break;
    case MissGenerator::step_tree:
      md = gen_missingness_step_tree(g.y_complete, r.thresholds, r.leaf_probs);
      break;
  }
  g.m = std::move(md.m);
  g.detection = std::move(md.detection);
  if (r.amputate) g.x_amputed = ampute_mar(g.x_complete, r.ampute, amp_rng);
  g.x_names = default_names("X", r.q);
  g.y_names = default_names("Y", r.p);
  return g;
}

//------------------------------------------------------------------------------
// Recipe files (JSON)

namespace detail {

inline MatrixXd json_matrix(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw DataError("recipe: expected a non-empty matrix");
  MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (j[r].size() != j[0].size()) throw DataError("recipe: ragged matrix");
    for (std::size_t c = 0; c < j[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
  }
  return m;
}

inline VectorXd json_vector(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline void build_nested_tree(const nlohmann::json& j, DecisionTree& tree, int id) {
  if (j.contains("leaf")) {
    tree.node(id).mu = json_vector(j.at("leaf"));
    return;
  }
  SplitRule rule;
  rule.var = j.at("var").get<int>();
  rule.cutpoint = j.at("cut").get<double>();
  rule.missing = j.value("missing", std::string("left")) == "right" ? MissingDirection::right : MissingDirection::left;
  tree.grow(id, rule);
  const int left = tree.node(id).left;
  const int right = tree.node(id).right;
  build_nested_tree(j.at("left"), tree, left);
  build_nested_tree(j.at("right"), tree, right);
}

}  // namespace detail

/// Tree written as nested {"var", "cut", "left", "right"} objects with
/// {"leaf": [...]} terminals.
inline DecisionTree tree_from_nested_json(const nlohmann::json& j, int response_dim) {
  DecisionTree t(response_dim);
  detail::build_nested_tree(j, t, 0);
  if (!t.valid()) throw DataError("recipe: malformed tree");
  return t;
}

inline MechanismTarget parse_target(const std::string& s) {
  if (s == "X_only") return MechanismTarget::x_only;
  if (s == "Y_only") return MechanismTarget::y_only;
  if (s == "X_and_Y") return MechanismTarget::x_and_y;
  throw DataError("recipe: unknown mechanism target '" + s + "'");
}

inline SimRecipe recipe_from_json(const nlohmann::json& j) {
  SimRecipe r;
  r.schema_version = j.value("schema_version", 1);
  if (r.schema_version != 1) throw DataError("recipe: unsupported schema_version " + std::to_string(r.schema_version));
  r.name = j.value("name", std::string());
  r.note = j.value("note", std::string());
  r.n = j.value("n", 2000);
  r.structure_seed = j.value("structure_seed", std::uint64_t{1});
  const auto& d = j.at("data");
  const std::string gen = d.at("generator").get<std::string>();
  if (gen == "friedman_uni") {
    r.data = DataGenerator::friedman_uni;
    r.p = 1;
    r.q = 5;
    r.noise_sd = d.value("noise_sd", 1.0);
  } else if (gen == "friedman_multi") {
    r.data = DataGenerator::friedman_multi;
    r.q = 10;
    r.coef_cov = detail::json_matrix(d.at("coef_cov"));
    r.noise_cov = detail::json_matrix(d.at("noise_cov"));
    r.p = r.coef_cov.rows();
  } else if (gen == "bart_draw") {
    r.data = DataGenerator::bart_draw;
    r.q = d.at("q").get<int>();
    r.noise_cov = detail::json_matrix(d.at("noise_cov"));
    r.p = r.noise_cov.rows();
    r.data_trees = d.value("n_trees", 8);
    r.leaf_sd = d.value("leaf_sd", 1.0);
  } else {
    throw DataError("recipe: unknown data generator '" + gen + "'");
  }
  if (j.contains("missingness")) {
    const auto& m = j.at("missingness");
    const std::string mg = m.at("generator").get<std::string>();
    r.standardize = m.value("standardize", true);
    if (m.contains("target")) r.target = parse_target(m.at("target").get<std::string>());
    if (mg == "probit_reg") {
      r.miss = MissGenerator::probit_reg;
      r.b_sim = detail::json_matrix(m.at("coefficients"));
      r.r_sim = m.contains("correlation") ? detail::json_matrix(m.at("correlation")) : MatrixXd(MatrixXd::Identity(r.p, r.p));
    } else if (mg == "probit_bart_trees") {
      r.miss = MissGenerator::probit_bart_trees;
      r.miss_trees = Forest(0, static_cast<int>(r.p));
      for (const auto& t : m.at("trees")) r.miss_trees.trees.push_back(tree_from_nested_json(t, static_cast<int>(r.p)));
      r.offset = m.contains("offset") ? detail::json_vector(m.at("offset")) : VectorXd(VectorXd::Zero(r.p));
    } else if (mg == "step_tree") {
      r.miss = MissGenerator::step_tree;
      r.thresholds = m.at("thresholds").get<std::vector<double>>();
      r.leaf_probs = m.at("leaf_probs").get<std::vector<double>>();
    } else if (mg != "none") {
      throw DataError("recipe: unknown missingness generator '" + mg + "'");
    }
  }
  if (j.contains("ampute")) {
    const auto& a = j.at("ampute");
    r.amputate = true;
    r.ampute.prop = a.value("prop", 0.5);
    const std::string pats = a.contains("patterns") && a.at("patterns").is_string() ? a.at("patterns").get<std::string>() : "";
    if (pats == "diagonal" || !a.contains("patterns")) {
      r.ampute = AmputeSpec::diagonal(r.q, r.ampute.prop);
    } else {
      r.ampute.patterns = a.at("patterns").get<std::vector<std::vector<int>>>();
      if (a.contains("freq")) r.ampute.freq = a.at("freq").get<std::vector<double>>();
      if (a.contains("weights")) r.ampute.weights = a.at("weights").get<std::vector<std::vector<double>>>();
    }
  }
  if (j.contains("target_observed")) r.target_observed = detail::json_vector(j.at("target_observed"));
  r.validate();
  return r;
}

inline SimRecipe load_recipe(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open recipe file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("recipe " + path + ": " + e.what());
  }
  return recipe_from_json(j);
}

//==============================================================================
// Cross-validation

enum class CvModel : std::uint8_t { missbart1, missbart2, mvbart_cc, unibart_cc, oracle };

inline std::string to_string(CvModel m) {
  switch (m) {
    case CvModel::missbart1: return "missbart1";
    case CvModel::missbart2: return "missbart2";
    case CvModel::mvbart_cc: return "mvbart_cc";
    case CvModel::unibart_cc: return "unibart_cc";
    case CvModel::oracle: return "oracle";
  }
  return "?";
}

inline CvModel parse_cv_model(const std::string& s) {
  for (CvModel m : {CvModel::missbart1, CvModel::missbart2, CvModel::mvbart_cc, CvModel::unibart_cc, CvModel::oracle}) {
    if (to_string(m) == s) return m;
  }
  throw UsageError("unknown model '" + s + "'");
}

struct MetricRecord {
  std::string model;
  int fold = 0;
  std::string split;   // missing | observed | combined
  std::string metric;  // frobenius | rmse | crps
  int response = -1;   // -1 for aggregate metrics
  double value = 0.0;
};

/// Random partition of 0..n-1 into k folds of near-equal size.
inline std::vector<std::vector<int>> make_folds(Eigen::Index n, int k, Rng& rng) {
  if (k < 2) throw DomainError("make_folds: need k >= 2");
  if (n < k) throw DomainError("make_folds: fewer rows than folds");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    const auto lo = static_cast<std::size_t>(f * n / k);
    const auto hi = static_cast<std::size_t>((f + 1) * n / k);
    folds[static_cast<std::size_t>(f)].assign(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi));
    std::sort(folds[static_cast<std::size_t>(f)].begin(), folds[static_cast<std::size_t>(f)].end());
  }
  return folds;
}

/// Cells of the held-out rows whose detection probability is at most p_t.
inline CellMask threshold_mask(const MatrixXd& detection, double p_t) {
  return detection.unaryExpr([p_t](double d) { return d <= p_t; });
}

/// Append frobenius, per-response rmse and per-response crps records for one
/// split; skipped when the split holds no cells.
inline void append_metrics(std::vector<MetricRecord>& out, const std::string& model, int fold,
                           const std::string& split, const MatrixXd& pred, const std::vector<MatrixXd>& predictive,
                           const MatrixXd& truth, const CellMask& mask) {
  if (mask.count() == 0) return;
  out.push_back({model, fold, split, "frobenius", -1, frobenius(pred, truth, mask)});
  const VectorXd r = rmse(pred, truth, mask);
  const VectorXd c = crps_empirical(predictive, truth, mask);
  for (Eigen::Index j = 0; j < truth.cols(); ++j) {
    if (!std::isnan(r(j))) out.push_back({model, fold, split, "rmse", static_cast<int>(j), r(j)});
    if (!std::isnan(c(j))) out.push_back({model, fold, split, "crps", static_cast<int>(j), c(j)});
  }
}

struct CvResult {
  std::vector<std::vector<int>> folds;
  std::vector<MetricRecord> records;
};

/// k-fold cross-validation: every model trains on k - 1 folds of the observed
/// data and predicts the held-out rows; metrics compare with the complete
/// responses, split by the held-out missingness. `max_folds` > 0 evaluates
/// only the first folds.
inline CvResult run_cv(const GeneratedDataset& data, const std::vector<CvModel>& models, int k,
                       const SamplerConfig& cfg, Rng& rng, int max_folds = 0) {
  CvResult res;
  res.folds = make_folds(data.y_complete.rows(), k, rng);
  const Dataset full = data.observed();
  const int n_eval = max_folds > 0 ? std::min(max_folds, k) : k;
  for (int f = 0; f < n_eval; ++f) {
    const auto& test = res.folds[static_cast<std::size_t>(f)];
    std::vector<int> train;
    for (int g = 0; g < k; ++g) {
      if (g != f) train.insert(train.end(), res.folds[static_cast<std::size_t>(g)].begin(), res.folds[static_cast<std::size_t>(g)].end());
    }
    std::sort(train.begin(), train.end());
    const Dataset train_data = subset_rows(full, train);
    const PredictorMatrix x_test = take_rows(full.x, test);
    const MatrixXd truth = take_rows(data.y_complete, test);
    const Eigen::MatrixXi m_test = take_rows(data.m, test);
    const CellMask missing = m_test.unaryExpr([](int v) { return v == 0; });
    const CellMask observed = m_test.unaryExpr([](int v) { return v == 1; });
    const CellMask combined = full_mask(truth.rows(), truth.cols());
    SamplerConfig c = cfg;
    c.seed = cfg.seed + 104729ULL * static_cast<std::uint64_t>(f + 1);
    c.store_forests = false;
    for (CvModel model : models) {
      MatrixXd pred;
      std::vector<MatrixXd> predictive;
      switch (model) {
        case CvModel::missbart1: {
          const ChainOutput o = run_missbart1(train_data, c, &x_test);
          pred = o.test_prediction_mean();
          predictive = o.test_predictive;
          break;
        }
        case CvModel::missbart2: {
          const ChainOutput o = run_missbart2(train_data, c, &x_test);
          pred = o.test_prediction_mean();
          predictive = o.test_predictive;
          break;
        }
        case CvModel::mvbart_cc: {
          const ChainOutput o = run_mvbart_cc(train_data, c, &x_test);
          pred = o.test_prediction_mean();
          predictive = o.test_predictive;
          break;
        }
        case CvModel::unibart_cc: {
          TestDraws d = run_unibart_cc(train_data, c, x_test);
          pred = MatrixXd::Zero(truth.rows(), truth.cols());
          for (const auto& m : d.mean) pred += m;
          pred /= static_cast<double>(d.mean.size());
          predictive = std::move(d.predictive);
          break;
        }
        case CvModel::oracle:
          pred = truth;
          predictive = {truth, truth};
          break;
      }
      const std::string name = to_string(model);
      append_metrics(res.records, name, f, "missing", pred, predictive, truth, missing);
      append_metrics(res.records, name, f, "observed", pred, predictive, truth, observed);
      append_metrics(res.records, name, f, "combined", pred, predictive, truth, combined);
    }
  }
  return res;
}

}  // namespace missbart
