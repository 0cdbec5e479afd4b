#pragma once

// Decision trees with axis-aligned splits and missing-value routing, the tree
// prior, the four Metropolis-Hastings proposals, the multivariate terminal-node
// marginal likelihood and the backfitting sum-of-trees ensemble.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "missbart/errors.hpp"
#include "missbart/stats.hpp"

namespace missbart {

/// Row-major so that routing a row touches contiguous memory. Missing cells are NaN.
using PredictorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class MissingDirection : std::uint8_t { left, right };

struct SplitRule {
  int var = -1;
  int cut_index = -1;  // position of cutpoint in the variable's grid
  double cutpoint = 0.0;
  MissingDirection missing = MissingDirection::left;

  [[nodiscard]] bool goes_left(double x) const {
    if (std::isnan(x)) return missing == MissingDirection::left;
    return x <= cutpoint;
  }

  friend bool operator==(const SplitRule&, const SplitRule&) = default;
};

struct TreeNode {
  int parent = -1;
  int left = -1;
  int right = -1;
  int depth = 0;
  SplitRule rule;
  VectorXd mu;  // terminal-node parameter; meaningful for leaves only

  [[nodiscard]] bool is_leaf() const { return left < 0; }
};

//==============================================================================
// SplitGrid

/// Per-predictor sorted cutpoint grid: the unique non-missing values of the
/// column, minus the largest (a split "x <= max" would leave the right child empty).
class SplitGrid {
 public:
  SplitGrid() = default;
  explicit SplitGrid(std::vector<std::vector<double>> cuts) : cuts_(std::move(cuts)) {}

  static SplitGrid from_columns(const PredictorMatrix& x) {
    std::vector<std::vector<double>> cuts(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      std::vector<double> vals;
      vals.reserve(static_cast<std::size_t>(x.rows()));
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        if (!std::isnan(x(r, c))) vals.push_back(x(r, c));
      }
      std::sort(vals.begin(), vals.end());
      vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
      if (!vals.empty()) vals.pop_back();
      cuts[static_cast<std::size_t>(c)] = std::move(vals);
    }
    return SplitGrid(std::move(cuts));
  }

  [[nodiscard]] int num_vars() const { return static_cast<int>(cuts_.size()); }
  [[nodiscard]] const std::vector<double>& cuts(int var) const { return cuts_.at(static_cast<std::size_t>(var)); }
  [[nodiscard]] int size(int var) const { return static_cast<int>(cuts(var).size()); }

 private:
  std::vector<std::vector<double>> cuts_;
};

/// Half-open range [lo, hi) of grid indices still available at a node.
struct CutRange {
  int lo = 0;
  int hi = 0;
  [[nodiscard]] int count() const { return std::max(0, hi - lo); }
};

//==============================================================================
// DecisionTree

class DecisionTree {
 public:
  DecisionTree() : DecisionTree(1) {}

  explicit DecisionTree(int response_dim) : response_dim_(response_dim) {
    TreeNode root;
    root.mu = VectorXd::Zero(response_dim);
    nodes_.push_back(std::move(root));
  }

  [[nodiscard]] int response_dim() const { return response_dim_; }
  [[nodiscard]] const std::vector<TreeNode>& nodes() const { return nodes_; }
  [[nodiscard]] const TreeNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  TreeNode& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] int size() const { return static_cast<int>(nodes_.size()); }

  [[nodiscard]] int num_leaves() const {
    return static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
  }
  [[nodiscard]] int num_internal() const { return size() - num_leaves(); }

  [[nodiscard]] std::vector<int> leaves() const {
    std::vector<int> out;
    for (int id : depth_first()) {
      if (node(id).is_leaf()) out.push_back(id);
    }
    return out;
  }

  [[nodiscard]] std::vector<int> internal_nodes() const {
    std::vector<int> out;
    for (int id : depth_first()) {
      if (!node(id).is_leaf()) out.push_back(id);
    }
    return out;
  }

  /// Internal nodes whose two children are both leaves (prunable).
  [[nodiscard]] std::vector<int> nog_nodes() const {
    std::vector<int> out;
    for (int id : depth_first()) {
      const TreeNode& n = node(id);
      if (!n.is_leaf() && node(n.left).is_leaf() && node(n.right).is_leaf()) out.push_back(id);
    }
    return out;
  }

  /// Parent/child pairs where both are internal (swap candidates).
  [[nodiscard]] std::vector<std::pair<int, int>> swap_pairs() const {
    std::vector<std::pair<int, int>> out;
    for (int id : depth_first()) {
      const TreeNode& n = node(id);
      if (n.is_leaf()) continue;
      if (!node(n.left).is_leaf()) out.emplace_back(id, n.left);
      if (!node(n.right).is_leaf()) out.emplace_back(id, n.right);
    }
    return out;
  }

  [[nodiscard]] int max_depth() const {
    int d = 0;
    for (const auto& n : nodes_) d = std::max(d, n.depth);
    return d;
  }

  /// Node ids in pre-order (root, left subtree, right subtree).
  [[nodiscard]] std::vector<int> depth_first() const {
    std::vector<int> out;
    out.reserve(nodes_.size());
    std::vector<int> stack{0};
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      out.push_back(id);
      const TreeNode& n = node(id);
      if (!n.is_leaf()) {
        stack.push_back(n.right);
        stack.push_back(n.left);
      }
    }
    return out;
  }

  template <class Row>
  [[nodiscard]] int route(const Row& row) const {
    int id = 0;
    while (!nodes_[static_cast<std::size_t>(id)].is_leaf()) {
      const TreeNode& n = nodes_[static_cast<std::size_t>(id)];
      id = n.rule.goes_left(row[n.rule.var]) ? n.left : n.right;
    }
    return id;
  }

  [[nodiscard]] int route_row(const PredictorMatrix& x, Eigen::Index r) const {
    const double* row = x.data() + r * x.cols();
    return route(row);
  }

  /// Split a leaf; both children inherit the parent's mu.
  void grow(int leaf, const SplitRule& rule) {
    if (!node(leaf).is_leaf()) throw std::logic_error("grow: node is not a leaf");
    const int left = size();
    const int right = left + 1;
    TreeNode child;
    child.parent = leaf;
    child.depth = node(leaf).depth + 1;
    child.mu = node(leaf).mu;
    nodes_.push_back(child);
    nodes_.push_back(child);
    TreeNode& parent = node(leaf);
    parent.left = left;
    parent.right = right;
    parent.rule = rule;
  }

  /// Collapse an internal node whose children are leaves; ids are compacted.
  void prune(int id) {
    const TreeNode& n = node(id);
    if (n.is_leaf() || !node(n.left).is_leaf() || !node(n.right).is_leaf()) {
      throw std::logic_error("prune: node must have two leaf children");
    }
    const int dead_a = n.left;
    const int dead_b = n.right;
    std::vector<int> remap(nodes_.size(), -1);
    std::vector<TreeNode> kept;
    kept.reserve(nodes_.size() - 2);
    for (int i = 0; i < size(); ++i) {
      if (i == dead_a || i == dead_b) continue;
      remap[static_cast<std::size_t>(i)] = static_cast<int>(kept.size());
      kept.push_back(nodes_[static_cast<std::size_t>(i)]);
    }
    for (auto& k : kept) {
      if (k.parent >= 0) k.parent = remap[static_cast<std::size_t>(k.parent)];
      if (k.left >= 0) {
        k.left = remap[static_cast<std::size_t>(k.left)];
        k.right = remap[static_cast<std::size_t>(k.right)];
      }
    }
    TreeNode& collapsed = kept[static_cast<std::size_t>(remap[static_cast<std::size_t>(id)])];
    collapsed.left = -1;
    collapsed.right = -1;
    collapsed.rule = SplitRule{};
    collapsed.mu = VectorXd::Zero(response_dim_);
    nodes_ = std::move(kept);
  }

  /// Structural check: two children per internal node, consistent parents and depths.
  [[nodiscard]] bool valid() const {
    int internal = 0;
    int leaves = 0;
    for (int i = 0; i < size(); ++i) {
      const TreeNode& n = node(i);
      if (n.is_leaf()) {
        ++leaves;
        if (n.right >= 0 || n.mu.size() != response_dim_) return false;
      } else {
        ++internal;
        if (n.right < 0 || n.left >= size() || n.right >= size()) return false;
        if (node(n.left).parent != i || node(n.right).parent != i) return false;
        if (node(n.left).depth != n.depth + 1 || node(n.right).depth != n.depth + 1) return false;
      }
    }
    return leaves == internal + 1 && static_cast<int>(depth_first().size()) == size();
  }

  /// Available cut ranges per variable at every node, given ancestors' splits.
  [[nodiscard]] std::vector<std::vector<CutRange>> cut_ranges(const SplitGrid& grid) const {
    std::vector<std::vector<CutRange>> ranges(nodes_.size());
    std::vector<CutRange> root(static_cast<std::size_t>(grid.num_vars()));
    for (int v = 0; v < grid.num_vars(); ++v) root[static_cast<std::size_t>(v)] = {0, grid.size(v)};
    ranges[0] = std::move(root);
    for (int id : depth_first()) {
      const TreeNode& n = node(id);
      if (n.is_leaf()) continue;
      auto left = ranges[static_cast<std::size_t>(id)];
      auto right = left;
      auto& lv = left[static_cast<std::size_t>(n.rule.var)];
      auto& rv = right[static_cast<std::size_t>(n.rule.var)];
      lv.hi = std::min(lv.hi, n.rule.cut_index);
      rv.lo = std::max(rv.lo, n.rule.cut_index + 1);
      ranges[static_cast<std::size_t>(n.left)] = std::move(left);
      ranges[static_cast<std::size_t>(n.right)] = std::move(right);
    }
    return ranges;
  }

 private:
  int response_dim_;
  std::vector<TreeNode> nodes_;
};

inline int count_available_vars(const std::vector<CutRange>& ranges) {
  return static_cast<int>(std::count_if(ranges.begin(), ranges.end(), [](const CutRange& r) { return r.count() > 0; }));
}

//==============================================================================
// Forest

struct Forest {
  std::vector<DecisionTree> trees;
  int response_dim = 1;

  Forest() = default;
  Forest(int n_trees, int p) : trees(static_cast<std::size_t>(n_trees), DecisionTree(p)), response_dim(p) {}

  [[nodiscard]] int size() const { return static_cast<int>(trees.size()); }

  [[nodiscard]] VectorXd predict_row(const double* row) const {
    VectorXd out = VectorXd::Zero(response_dim);
    for (const auto& t : trees) out += t.node(t.route(row)).mu;
    return out;
  }

  [[nodiscard]] MatrixXd predict(const PredictorMatrix& x) const {
    MatrixXd out(x.rows(), response_dim);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      out.row(r) = predict_row(x.data() + r * x.cols()).transpose();
    }
    return out;
  }
};

//==============================================================================
// Priors

enum class TreeMove : std::uint8_t { grow, prune, change, swap };

struct MoveProbabilities {
  double grow = 0.25;
  double prune = 0.25;
  double change = 0.4;
  double swap = 0.1;
};

struct TreePrior {
  double alpha = 0.95;
  double beta = 2.0;
  MoveProbabilities moves;

  [[nodiscard]] double split_probability(int depth) const {
    return alpha * std::pow(1.0 + static_cast<double>(depth), -beta);
  }

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("TreePrior: alpha must lie in (0, 1)");
    if (!(beta >= 0.0)) throw DomainError("TreePrior: beta must be >= 0");
    const double total = moves.grow + moves.prune + moves.change + moves.swap;
    if (std::abs(total - 1.0) > 1e-12 || moves.grow < 0 || moves.prune < 0 || moves.change < 0 || moves.swap < 0) {
      throw DomainError("TreePrior: move probabilities must be non-negative and sum to 1");
    }
  }
};

struct NodePriorParams {
  double tau_mu = 1.0;
  VectorXd mu0;  // empty means the zero vector
};

/// Topology-only log prior: split terms at internal nodes, stop terms at leaves.
inline double log_tree_prior(const DecisionTree& tree, const TreePrior& prior) {
  double lp = 0.0;
  for (const auto& n : tree.nodes()) {
    const double ps = prior.split_probability(n.depth);
    lp += n.is_leaf() ? std::log1p(-ps) : std::log(ps);
  }
  return lp;
}

/// Log prior including split-rule choice: uniform over available variables,
/// uniform over the available cutpoints of the chosen variable and a fair coin
/// for the missing-value direction. Leaves with no available split carry
/// probability one of stopping. Returns -inf for rules outside their range.
inline double log_tree_prior_full(const DecisionTree& tree, const TreePrior& prior, const SplitGrid& grid) {
  const auto ranges = tree.cut_ranges(grid);
  double lp = 0.0;
  for (int id = 0; id < tree.size(); ++id) {
    const TreeNode& n = tree.node(id);
    const auto& r = ranges[static_cast<std::size_t>(id)];
    const int nv = count_available_vars(r);
    const double ps = prior.split_probability(n.depth);
    if (n.is_leaf()) {
      if (nv > 0) lp += std::log1p(-ps);
      continue;
    }
    const CutRange& vr = r[static_cast<std::size_t>(n.rule.var)];
    if (nv == 0 || n.rule.cut_index < vr.lo || n.rule.cut_index >= vr.hi) {
      return -std::numeric_limits<double>::infinity();
    }
    lp += std::log(ps) - std::log(static_cast<double>(nv)) - std::log(static_cast<double>(vr.count())) -
          std::numbers::ln2;
  }
  return lp;
}

//==============================================================================
// Terminal-node likelihood

struct LeafSuffStats {
  int n = 0;
  VectorXd sum;
};

/// Log marginal likelihood of one terminal node with the node parameter
/// integrated out, dropping the terms (2 pi, |Omega|, sum r' Omega r) that are
/// identical for every partition of the same rows.
inline double node_log_marginal_reduced(const LeafSuffStats& s, const SpdMatrix& omega, const NodePriorParams& prior) {
  const Eigen::Index p = omega.dim();
  const double tau = prior.tau_mu;
  MatrixXd prec = static_cast<double>(s.n) * omega.matrix();
  prec.diagonal().array() += tau;
  const Eigen::LLT<MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success) throw NumericError("node_log_marginal: posterior precision not SPD");
  VectorXd lin = s.n > 0 ? VectorXd(omega.matrix() * s.sum) : VectorXd(VectorXd::Zero(p));
  double prior_quad = 0.0;
  if (prior.mu0.size() == p) {
    lin += tau * prior.mu0;
    prior_quad = tau * prior.mu0.squaredNorm();
  }
  const double log_det_prec = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double quad = lin.dot(llt.solve(lin));
  return 0.5 * static_cast<double>(p) * std::log(tau) - 0.5 * log_det_prec + 0.5 * quad - 0.5 * prior_quad;
}

/// Exact log marginal likelihood of the residual rows (n_l x p) in one node.
inline double node_log_marginal(const MatrixXd& residuals, const SpdMatrix& omega, const NodePriorParams& prior) {
  if (residuals.rows() < 1) throw DomainError("node_log_marginal: node must hold at least one row");
  if (residuals.cols() != omega.dim()) throw DomainError("node_log_marginal: dimension mismatch");
  const double n = static_cast<double>(residuals.rows());
  const double p = static_cast<double>(residuals.cols());
  LeafSuffStats s{static_cast<int>(residuals.rows()), residuals.colwise().sum().transpose()};
  const double quad_resid = (residuals * omega.matrix()).cwiseProduct(residuals).sum();
  return -0.5 * n * p * std::log(2.0 * std::numbers::pi) + 0.5 * n * omega.log_det() - 0.5 * quad_resid +
         node_log_marginal_reduced(s, omega, prior);
}

/// Row-to-leaf assignment and per-node sufficient statistics for one tree.
struct LeafStatistics {
  std::vector<int> node_of_row;
  std::vector<LeafSuffStats> by_node;  // indexed by node id; filled for leaves

  [[nodiscard]] bool has_empty_leaf(const DecisionTree& tree) const {
    for (int id = 0; id < tree.size(); ++id) {
      if (tree.node(id).is_leaf() && by_node[static_cast<std::size_t>(id)].n == 0) return true;
    }
    return false;
  }
};

inline LeafStatistics compute_leaf_statistics(const DecisionTree& tree, const PredictorMatrix& x,
                                              const MatrixXd& residual) {
  LeafStatistics st;
  const Eigen::Index n = x.rows();
  const Eigen::Index p = residual.cols();
  st.node_of_row.resize(static_cast<std::size_t>(n));
  st.by_node.assign(static_cast<std::size_t>(tree.size()), LeafSuffStats{0, VectorXd::Zero(p)});
  for (Eigen::Index r = 0; r < n; ++r) {
    const int leaf = tree.route_row(x, r);
    st.node_of_row[static_cast<std::size_t>(r)] = leaf;
    auto& s = st.by_node[static_cast<std::size_t>(leaf)];
    ++s.n;
    s.sum += residual.row(r).transpose();
  }
  return st;
}

inline double tree_log_likelihood(const DecisionTree& tree, const LeafStatistics& st, const SpdMatrix& omega,
                                  const NodePriorParams& prior) {
  double ll = 0.0;
  for (int id = 0; id < tree.size(); ++id) {
    if (tree.node(id).is_leaf()) ll += node_log_marginal_reduced(st.by_node[static_cast<std::size_t>(id)], omega, prior);
  }
  return ll;
}

//==============================================================================
// Proposals

struct TreeProposal {
  DecisionTree tree;
  double log_q_ratio = 0.0;  // log q(proposed -> current) - log q(current -> proposed)
  bool noop = true;
  TreeMove move = TreeMove::grow;
};

inline double move_probability(const TreePrior& prior, TreeMove m) {
  switch (m) {
    case TreeMove::grow: return prior.moves.grow;
    case TreeMove::prune: return prior.moves.prune;
    case TreeMove::change: return prior.moves.change;
    case TreeMove::swap: return prior.moves.swap;
  }
  return 0.0;
}

namespace detail {

struct SplittableLeaves {
  std::vector<int> ids;
};

inline std::vector<int> splittable_leaves(const DecisionTree& tree, const std::vector<std::vector<CutRange>>& ranges) {
  std::vector<int> out;
  for (int id : tree.leaves()) {
    if (count_available_vars(ranges[static_cast<std::size_t>(id)]) > 0) out.push_back(id);
  }
  return out;
}

inline SplitRule draw_rule(const std::vector<CutRange>& ranges, const SplitGrid& grid, Rng& rng, int* n_vars,
                           int* n_cuts) {
  std::vector<int> vars;
  for (int v = 0; v < static_cast<int>(ranges.size()); ++v) {
    if (ranges[static_cast<std::size_t>(v)].count() > 0) vars.push_back(v);
  }
  SplitRule rule;
  rule.var = vars[rng.index(vars.size())];
  const CutRange& r = ranges[static_cast<std::size_t>(rule.var)];
  rule.cut_index = r.lo + static_cast<int>(rng.index(static_cast<std::size_t>(r.count())));
  rule.cutpoint = grid.cuts(rule.var)[static_cast<std::size_t>(rule.cut_index)];
  rule.missing = rng.bernoulli(0.5) ? MissingDirection::left : MissingDirection::right;
  *n_vars = static_cast<int>(vars.size());
  *n_cuts = r.count();
  return rule;
}

}  // namespace detail

/// Topology and split rules drawn from the tree prior on `grid`; every leaf
/// gets mu = 0.
inline DecisionTree draw_prior_tree(const SplitGrid& grid, const TreePrior& prior, int response_dim, Rng& rng) {
  DecisionTree tree(response_dim);
  std::vector<int> frontier{0};
  while (!frontier.empty()) {
    const int id = frontier.back();
    frontier.pop_back();
    const auto ranges = tree.cut_ranges(grid);
    const auto& r = ranges[static_cast<std::size_t>(id)];
    if (count_available_vars(r) == 0 || !rng.bernoulli(prior.split_probability(tree.node(id).depth))) continue;
    int nv = 0;
    int nc = 0;
    tree.grow(id, detail::draw_rule(r, grid, rng, &nv, &nc));
    frontier.push_back(tree.node(id).left);
    frontier.push_back(tree.node(id).right);
  }
  return tree;
}

/// Propose a new tree by one grow/prune/change/swap move. Moves that are
/// illegal for the current topology come back as no-ops.
inline TreeProposal propose_tree(const DecisionTree& tree, TreeMove move, const SplitGrid& grid,
                                 const TreePrior& prior, Rng& rng) {
  TreeProposal out{tree, 0.0, true, move};
  switch (move) {
    case TreeMove::grow: {
      const auto ranges = tree.cut_ranges(grid);
      const auto candidates = detail::splittable_leaves(tree, ranges);
      if (candidates.empty()) return out;
      const int leaf = candidates[rng.index(candidates.size())];
      int nv = 0;
      int nc = 0;
      const SplitRule rule = detail::draw_rule(ranges[static_cast<std::size_t>(leaf)], grid, rng, &nv, &nc);
      out.tree.grow(leaf, rule);
      const auto nog_after = out.tree.nog_nodes().size();
      out.log_q_ratio = std::log(prior.moves.prune / static_cast<double>(nog_after)) -
                        std::log(prior.moves.grow / static_cast<double>(candidates.size())) +
                        std::log(static_cast<double>(nv)) + std::log(static_cast<double>(nc)) + std::numbers::ln2;
      out.noop = false;
      return out;
    }
    case TreeMove::prune: {
      const auto nogs = tree.nog_nodes();
      if (nogs.empty()) return out;
      const int id = nogs[rng.index(nogs.size())];
      const auto ranges = tree.cut_ranges(grid);
      const auto& r = ranges[static_cast<std::size_t>(id)];
      const int nv = count_available_vars(r);
      const int nc = r[static_cast<std::size_t>(tree.node(id).rule.var)].count();
      out.tree.prune(id);
      const auto ranges_after = out.tree.cut_ranges(grid);
      const auto leaves_after = detail::splittable_leaves(out.tree, ranges_after).size();
      out.log_q_ratio = std::log(prior.moves.grow / static_cast<double>(leaves_after)) -
                        std::log(static_cast<double>(nv)) - std::log(static_cast<double>(nc)) - std::numbers::ln2 -
                        std::log(prior.moves.prune / static_cast<double>(nogs.size()));
      out.noop = false;
      return out;
    }
    case TreeMove::change: {
      const auto internal = tree.internal_nodes();
      if (internal.empty()) return out;
      const int id = internal[rng.index(internal.size())];
      const auto ranges = tree.cut_ranges(grid);
      int nv = 0;
      int nc = 0;
      out.tree.node(id).rule = detail::draw_rule(ranges[static_cast<std::size_t>(id)], grid, rng, &nv, &nc);
      out.noop = false;
      return out;
    }
    case TreeMove::swap: {
      const auto pairs = tree.swap_pairs();
      if (pairs.empty()) return out;
      const auto [parent, child] = pairs[rng.index(pairs.size())];
      std::swap(out.tree.node(parent).rule, out.tree.node(child).rule);
      out.noop = false;
      return out;
    }
  }
  return out;
}

//==============================================================================
// Metropolis-Hastings tree update and leaf draws

struct TreeUpdateContext {
  const PredictorMatrix& x;
  const SplitGrid& grid;
  const MatrixXd& residual;  // partial residuals for this tree
  const SpdMatrix& omega;
  const NodePriorParams& node_prior;
  const TreePrior& tree_prior;
  bool likelihood_off = false;  // sample the prior (testing)
};

struct TreeStepResult {
  TreeMove move = TreeMove::grow;
  bool proposed = false;
  bool accepted = false;
  LeafStatistics stats;  // statistics of the tree kept
};

inline TreeMove draw_move(const TreePrior& prior, Rng& rng) {
  const double u = rng.uniform();
  const auto& m = prior.moves;
  if (u < m.grow) return TreeMove::grow;
  if (u < m.grow + m.prune) return TreeMove::prune;
  if (u < m.grow + m.prune + m.change) return TreeMove::change;
  return TreeMove::swap;
}

/// One MH step on the tree targeting prior(T) * prod_l p(r_l | T, Omega).
/// Proposals with an empty terminal node are rejected outright.
inline TreeStepResult mh_tree_update(DecisionTree& tree, const TreeUpdateContext& ctx, Rng& rng,
                                     const LeafStatistics* current_stats = nullptr) {
  TreeStepResult res;
  res.move = draw_move(ctx.tree_prior, rng);
  LeafStatistics cur = current_stats != nullptr ? *current_stats : compute_leaf_statistics(tree, ctx.x, ctx.residual);
  TreeProposal prop = propose_tree(tree, res.move, ctx.grid, ctx.tree_prior, rng);
  const double u = rng.uniform();
  if (prop.noop) {
    res.stats = std::move(cur);
    return res;
  }
  res.proposed = true;
  const double lp_new = log_tree_prior_full(prop.tree, ctx.tree_prior, ctx.grid);
  LeafStatistics next = compute_leaf_statistics(prop.tree, ctx.x, ctx.residual);
  if (!std::isfinite(lp_new) || next.has_empty_leaf(prop.tree)) {
    res.stats = std::move(cur);
    return res;
  }
  const double lp_cur = log_tree_prior_full(tree, ctx.tree_prior, ctx.grid);
  double log_ratio = lp_new - lp_cur + prop.log_q_ratio;
  if (!ctx.likelihood_off) {
    log_ratio += tree_log_likelihood(prop.tree, next, ctx.omega, ctx.node_prior) -
                 tree_log_likelihood(tree, cur, ctx.omega, ctx.node_prior);
  }
  if (std::log(u) < log_ratio) {
    tree = std::move(prop.tree);
    res.accepted = true;
    res.stats = std::move(next);
  } else {
    res.stats = std::move(cur);
  }
  return res;
}

/// Draw every leaf parameter from N((n Omega + tau I)^{-1}(Omega sum r + tau mu0), (n Omega + tau I)^{-1}).
inline void sample_node_params(DecisionTree& tree, const LeafStatistics& st, const SpdMatrix& omega,
                               const NodePriorParams& prior, Rng& rng) {
  const Eigen::Index p = omega.dim();
  for (int id = 0; id < tree.size(); ++id) {
    TreeNode& n = tree.node(id);
    if (!n.is_leaf()) continue;
    const LeafSuffStats& s = st.by_node[static_cast<std::size_t>(id)];
    if (s.n <= 0) throw std::logic_error("sample_node_params: empty terminal node");
    MatrixXd prec = static_cast<double>(s.n) * omega.matrix();
    prec.diagonal().array() += prior.tau_mu;
    VectorXd lin = omega.matrix() * s.sum;
    if (prior.mu0.size() == p) lin += prior.tau_mu * prior.mu0;
    n.mu = sample_mvn_canonical(lin, SpdMatrix(std::move(prec)), rng);
  }
}

//==============================================================================
// Sum-of-trees ensemble with backfitting

struct SweepStats {
  int proposed = 0;
  int accepted = 0;
};

class SumOfTrees {
 public:
  SumOfTrees() = default;
  SumOfTrees(int n_trees, Eigen::Index n_rows, int response_dim)
      : forest_(n_trees, response_dim), fitted_(MatrixXd::Zero(n_rows, response_dim)) {}

  [[nodiscard]] const Forest& forest() const { return forest_; }
  Forest& forest() { return forest_; }
  [[nodiscard]] const MatrixXd& fitted() const { return fitted_; }

  /// Replace the forest and recompute the fitted matrix from scratch.
  void reset(Forest forest, const PredictorMatrix& x) {
    forest_ = std::move(forest);
    fitted_ = forest_.predict(x);
    leaf_index_.assign(forest_.trees.size(), std::vector<int>(static_cast<std::size_t>(x.rows())));
    for (std::size_t k = 0; k < forest_.trees.size(); ++k) {
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        leaf_index_[k][static_cast<std::size_t>(r)] = forest_.trees[k].route_row(x, r);
      }
    }
  }

  /// Leaf id of every row in every tree, as of the last sweep or reset.
  [[nodiscard]] const std::vector<std::vector<int>>& leaf_index() const { return leaf_index_; }

  /// Reassign one row of one tree to another leaf, keeping the fitted matrix current.
  void move_row(std::size_t tree, Eigen::Index row, int new_leaf) {
    int& cur = leaf_index_[tree][static_cast<std::size_t>(row)];
    const DecisionTree& t = forest_.trees[tree];
    fitted_.row(row) += (t.node(new_leaf).mu - t.node(cur).mu).transpose();
    cur = new_leaf;
  }

  /// One backfitting pass: each tree gets an MH update against its partial
  /// residuals, then fresh leaf parameters; the fitted matrix is kept current.
  void sweep(const PredictorMatrix& x, const SplitGrid& grid, const MatrixXd& target, const SpdMatrix& omega,
             const NodePriorParams& node_prior, const TreePrior& tree_prior, Rng& rng, SweepStats* stats = nullptr) {
    const Eigen::Index n = x.rows();
    leaf_index_.resize(forest_.trees.size());
    for (std::size_t k = 0; k < forest_.trees.size(); ++k) {
      DecisionTree& tree = forest_.trees[k];
      std::vector<int> old_leaf(static_cast<std::size_t>(n));
      for (Eigen::Index r = 0; r < n; ++r) old_leaf[static_cast<std::size_t>(r)] = tree.route_row(x, r);
      residual_ = target - fitted_;
      for (Eigen::Index r = 0; r < n; ++r) {
        residual_.row(r) += tree.node(old_leaf[static_cast<std::size_t>(r)]).mu.transpose();
      }
      const TreeUpdateContext ctx{x, grid, residual_, omega, node_prior, tree_prior};
      const std::vector<VectorXd> old_mu = leaf_mus(tree, old_leaf);
      TreeStepResult res = mh_tree_update(tree, ctx, rng);
      if (stats != nullptr) {
        stats->proposed += res.proposed ? 1 : 0;
        stats->accepted += res.accepted ? 1 : 0;
      }
      sample_node_params(tree, res.stats, omega, node_prior, rng);
      for (Eigen::Index r = 0; r < n; ++r) {
        fitted_.row(r) += (tree.node(res.stats.node_of_row[static_cast<std::size_t>(r)]).mu -
                           old_mu[static_cast<std::size_t>(r)])
                              .transpose();
      }
      leaf_index_[k] = std::move(res.stats.node_of_row);
    }
  }

 private:
  static std::vector<VectorXd> leaf_mus(const DecisionTree& tree, const std::vector<int>& leaf) {
    std::vector<VectorXd> out;
    out.reserve(leaf.size());
    for (int id : leaf) out.push_back(tree.node(id).mu);
    return out;
  }

  Forest forest_;
  MatrixXd fitted_;
  MatrixXd residual_;
  std::vector<std::vector<int>> leaf_index_;
};

//==============================================================================
// Split diagnostics

/// Number of internal nodes splitting on each variable in one forest.
inline VectorXd split_counts(const Forest& forest, int n_vars) {
  VectorXd c = VectorXd::Zero(n_vars);
  for (const auto& t : forest.trees) {
    for (const auto& n : t.nodes()) {
      if (!n.is_leaf()) c(n.rule.var) += 1.0;
    }
  }
  return c;
}

/// Mean per-variable split usage over stored forest draws.
inline VectorXd count_split_usage(std::span<const Forest> draws, int n_vars) {
  if (draws.empty()) throw DomainError("count_split_usage: need at least one draw");
  VectorXd total = VectorXd::Zero(n_vars);
  for (const auto& f : draws) total += split_counts(f, n_vars);
  return total / static_cast<double>(draws.size());
}

/// Counts of parent->child internal-node pairs by unordered variable pair, for one forest.
/// Pairs splitting on the same variable are not interactions and are skipped.
inline MatrixXd interaction_counts(const Forest& forest, int n_vars) {
  MatrixXd c = MatrixXd::Zero(n_vars, n_vars);
  for (const auto& t : forest.trees) {
    for (const auto& n : t.nodes()) {
      if (n.is_leaf() || n.parent < 0) continue;
      const int a = t.node(n.parent).rule.var;
      const int b = n.rule.var;
      if (a == b) continue;
      c(a, b) += 1.0;
      c(b, a) += 1.0;
    }
  }
  return c;
}

inline MatrixXd count_interactions(std::span<const Forest> draws, int n_vars) {
  if (draws.empty()) throw DomainError("count_interactions: need at least one draw");
  MatrixXd total = MatrixXd::Zero(n_vars, n_vars);
  for (const auto& f : draws) total += interaction_counts(f, n_vars);
  return total / static_cast<double>(draws.size());
}

}  // namespace missbart
