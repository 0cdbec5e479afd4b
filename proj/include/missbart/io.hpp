#pragma once

// CSV ingestion, run configuration, chain persistence and table exports.

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "missbart/chain.hpp"
#include "missbart/data_model.hpp"
#include "missbart/errors.hpp"
#include "missbart/metrics.hpp"
#include "missbart/sim.hpp"
#include "missbart/tree.hpp"

namespace missbart {

inline constexpr int kChainFormatVersion = 1;
inline constexpr int kExportSchemaVersion = 1;

//==============================================================================
// CSV

struct CsvOptions {
  std::vector<std::string> responses;   // empty: every column not listed as a covariate
  std::vector<std::string> covariates;  // empty: every column not listed as a response
  std::string missing_marker = "NA";
  std::vector<std::string> log_responses;
  char delimiter = ',';
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == delim && !quoted) {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(cell);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Parse delimited text with a header row. The marker token and empty cells
/// are missing; flagged responses are log-transformed.
inline Dataset parse_csv(std::istream& in, const CsvOptions& opt, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": missing header row");
  std::vector<std::string> header = detail::split_line(line, opt.delimiter);
  for (auto& h : header) h = detail::trim(h);
  std::unordered_map<std::string, int> col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!col.emplace(header[c], static_cast<int>(c)).second) throw DataError(source + ": duplicate column '" + header[c] + "'");
  }
  auto resolve = [&](const std::vector<std::string>& names) {
    std::vector<int> idx;
    for (const auto& nm : names) {
      const auto it = col.find(nm);
      if (it == col.end()) throw DataError(source + ": no column named '" + nm + "'");
      idx.push_back(it->second);
    }
    return idx;
  };
  std::vector<std::string> y_names = opt.responses;
  std::vector<std::string> x_names = opt.covariates;
  if (y_names.empty() && x_names.empty()) throw UsageError("parse_csv: name the response columns");
  auto rest = [&](const std::vector<std::string>& taken) {
    std::vector<std::string> out;
    for (const auto& h : header) {
      if (std::find(taken.begin(), taken.end(), h) == taken.end()) out.push_back(h);
    }
    return out;
  };
  if (y_names.empty()) y_names = rest(x_names);
  if (x_names.empty()) x_names = rest(y_names);
  const std::vector<int> yi = resolve(y_names);
  const std::vector<int> xi = resolve(x_names);
  for (const auto& nm : opt.log_responses) {
    if (std::find(y_names.begin(), y_names.end(), nm) == y_names.end()) {
      throw DataError(source + ": log flag on '" + nm + "', which is not a response");
    }
  }
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_line(line, opt.delimiter);
    if (cells.size() != header.size()) {
      throw DataError(source + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " fields, expected " + std::to_string(header.size()));
    }
    std::vector<double> v(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string s = detail::trim(cells[c]);
      if (s.empty() || s == opt.missing_marker) {
        v[c] = kNaN;
        continue;
      }
      std::size_t used = 0;
      double d = 0.0;
      try {
        d = std::stod(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != s.size() || !std::isfinite(d)) {
        throw DataError(source + ": line " + std::to_string(line_no) + ", column '" + header[c] +
                        "': cannot parse '" + s + "'");
      }
      v[c] = d;
    }
    rows.push_back(std::move(v));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  Dataset d;
  d.x.resize(n, static_cast<Eigen::Index>(xi.size()));
  d.y.resize(n, static_cast<Eigen::Index>(yi.size()));
  for (Eigen::Index r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < xi.size(); ++c) d.x(r, static_cast<Eigen::Index>(c)) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(xi[c])];
    for (std::size_t c = 0; c < yi.size(); ++c) d.y(r, static_cast<Eigen::Index>(c)) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(yi[c])];
  }
  for (const auto& nm : opt.log_responses) {
    const auto j = static_cast<Eigen::Index>(std::find(y_names.begin(), y_names.end(), nm) - y_names.begin());
    for (Eigen::Index r = 0; r < n; ++r) {
      const double v = d.y(r, j);
      if (std::isnan(v)) continue;
      if (!(v > 0.0)) throw DomainError(source + ": log flag on '" + nm + "' but row " + std::to_string(r + 1) + " is not positive");
      d.y(r, j) = std::log(v);
    }
  }
  d.x_names = std::move(x_names);
  d.y_names = std::move(y_names);
  return d;
}

inline Dataset load_csv(const std::string& path, const CsvOptions& opt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file: " + path);
  return parse_csv(in, opt, path);
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

/// Covariates then responses, missing cells written as "NA".
inline void write_csv(std::ostream& out, const Dataset& d) {
  const auto names = [](const std::vector<std::string>& given, const std::string& stem, Eigen::Index k) {
    return static_cast<Eigen::Index>(given.size()) == k ? given : default_names(stem, k);
  };
  const auto xn = names(d.x_names, "X", d.q());
  const auto yn = names(d.y_names, "Y", d.p());
  bool first = true;
  for (const auto* list : {&xn, &yn}) {
    for (const auto& nm : *list) {
      out << (first ? "" : ",") << nm;
      first = false;
    }
  }
  out << '\n';
  for (Eigen::Index r = 0; r < d.n(); ++r) {
    for (Eigen::Index c = 0; c < d.q(); ++c) out << (c > 0 ? "," : "") << format_double(d.x(r, c));
    for (Eigen::Index c = 0; c < d.p(); ++c) out << ',' << format_double(d.y(r, c));
    out << '\n';
  }
}

inline void save_csv(const std::string& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  write_csv(out, d);
}

//==============================================================================
// JSON helpers

namespace detail {

inline nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double get_num(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline nlohmann::json to_json(const VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

template <class Derived>
nlohmann::json to_json_matrix(const Eigen::MatrixBase<Derived>& m) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(num(static_cast<double>(m(r, c))));
    a.push_back(std::move(row));
  }
  return a;
}

inline VectorXd vector_from(const nlohmann::json& j) {
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = get_num(j[i]);
  return v;
}

template <class Matrix = MatrixXd>
Matrix matrix_from(const nlohmann::json& j) {
  if (j.empty()) return Matrix();
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (j[r].size() != j[0].size()) throw DataError("ragged matrix in chain file");
    for (std::size_t c = 0; c < j[r].size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = get_num(j[r][c]);
    }
  }
  return m;
}

template <class T, class F>
nlohmann::json list_to_json(const std::vector<T>& items, F f) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& it : items) a.push_back(f(it));
  return a;
}

template <class T, class F>
std::vector<T> list_from(const nlohmann::json& j, F f) {
  std::vector<T> out;
  out.reserve(j.size());
  for (const auto& e : j) out.push_back(f(e));
  return out;
}

}  // namespace detail

//==============================================================================
// Tree serialization: depth-first node list

inline nlohmann::json tree_to_json(const DecisionTree& t) {
  nlohmann::json nodes = nlohmann::json::array();
  for (int id : t.depth_first()) {
    const TreeNode& n = t.node(id);
    if (n.is_leaf()) {
      nodes.push_back({{"mu", detail::to_json(n.mu)}});
    } else {
      nodes.push_back({{"var", n.rule.var},
                       {"cut", n.rule.cutpoint},
                       {"cut_index", n.rule.cut_index},
                       {"missing", n.rule.missing == MissingDirection::left ? "left" : "right"}});
    }
  }
  return nodes;
}

inline DecisionTree tree_from_json(const nlohmann::json& nodes, int response_dim) {
  DecisionTree t(response_dim);
  std::size_t pos = 0;
  const auto build = [&](auto& self, int id) -> void {
    if (pos >= nodes.size()) throw DataError("tree node list ends early");
    const auto& j = nodes[pos++];
    if (j.contains("mu")) {
      t.node(id).mu = detail::vector_from(j.at("mu"));
      return;
    }
    SplitRule rule;
    rule.var = j.at("var").get<int>();
    rule.cutpoint = j.at("cut").get<double>();
    rule.cut_index = j.value("cut_index", -1);
    rule.missing = j.at("missing").get<std::string>() == "left" ? MissingDirection::left : MissingDirection::right;
    t.grow(id, rule);
    const int left = t.node(id).left;
    const int right = t.node(id).right;
    self(self, left);
    self(self, right);
  };
  build(build, 0);
  if (pos != nodes.size() || !t.valid()) throw DataError("malformed tree node list");
  return t;
}

inline nlohmann::json forest_to_json(const Forest& f) {
  return detail::list_to_json(f.trees, [](const DecisionTree& t) { return tree_to_json(t); });
}

inline Forest forest_from_json(const nlohmann::json& j, int response_dim) {
  Forest f(0, response_dim);
  for (const auto& t : j) f.trees.push_back(tree_from_json(t, response_dim));
  return f;
}

//==============================================================================
// Sampler configuration

inline nlohmann::json config_to_json(const SamplerConfig& c) {
  nlohmann::json j = {{"n_trees", c.n_trees},
                      {"n_miss_trees", c.n_miss_trees},
                      {"burn_in", c.burn_in},
                      {"post_burn_in", c.post_burn_in},
                      {"thin", c.thin},
                      {"chains", c.chains},
                      {"seed", c.seed},
                      {"nu", c.nu},
                      {"rho_tau", c.rho_tau},
                      {"rho_mu", c.rho_mu},
                      {"alpha", c.tree_prior.alpha},
                      {"beta", c.tree_prior.beta},
                      {"moves", {c.tree_prior.moves.grow, c.tree_prior.moves.prune, c.tree_prior.moves.change, c.tree_prior.moves.swap}},
                      {"tmvn_sweeps", c.tmvn_sweeps},
                      {"sigma_y", c.sigma_y},
                      {"y_mis_update", c.y_mis_update == YMisUpdate::exact_conditional ? "exact_conditional" : "marginal_block"},
                      {"store_forests", c.store_forests}};
  if (c.psi) {
    j["psi"] = {c.psi->alpha0, c.psi->beta0, c.psi->alpha_x, c.psi->beta_x, c.psi->alpha_y, c.psi->beta_y};
  }
  return j;
}

/// Missing keys keep their defaults, so a config file may override any subset.
inline SamplerConfig config_from_json(const nlohmann::json& j, SamplerConfig c = {}) {
  c.n_trees = j.value("n_trees", c.n_trees);
  c.n_miss_trees = j.value("n_miss_trees", c.n_miss_trees);
  c.burn_in = j.value("burn_in", c.burn_in);
  c.post_burn_in = j.value("post_burn_in", c.post_burn_in);
  c.thin = j.value("thin", c.thin);
  c.chains = j.value("chains", c.chains);
  c.seed = j.value("seed", c.seed);
  c.nu = j.value("nu", c.nu);
  c.rho_tau = j.value("rho_tau", c.rho_tau);
  c.rho_mu = j.value("rho_mu", c.rho_mu);
  c.tree_prior.alpha = j.value("alpha", c.tree_prior.alpha);
  c.tree_prior.beta = j.value("beta", c.tree_prior.beta);
  if (j.contains("moves")) {
    const auto m = j.at("moves").get<std::vector<double>>();
    if (m.size() != 4) throw UsageError("moves needs four probabilities (grow, prune, change, swap)");
    c.tree_prior.moves = {m[0], m[1], m[2], m[3]};
  }
  c.tmvn_sweeps = j.value("tmvn_sweeps", c.tmvn_sweeps);
  c.sigma_y = j.value("sigma_y", c.sigma_y);
  if (j.contains("y_mis_update")) {
    const auto s = j.at("y_mis_update").get<std::string>();
    if (s == "exact_conditional") {
      c.y_mis_update = YMisUpdate::exact_conditional;
    } else if (s == "marginal_block") {
      c.y_mis_update = YMisUpdate::marginal_block;
    } else {
      throw UsageError("unknown y_mis_update '" + s + "'");
    }
  }
  c.store_forests = j.value("store_forests", c.store_forests);
  if (j.contains("psi")) {
    const auto v = j.at("psi").get<std::vector<double>>();
    if (v.size() != 6) throw UsageError("psi needs six values (alpha0, beta0, alpha_x, beta_x, alpha_y, beta_y)");
    c.psi = PsiHyperPrior{v[0], v[1], v[2], v[3], v[4], v[5]};
  }
  return c;
}

/// Everything a CLI run needs; the JSON config file uses the same keys.
struct RunConfig {
  std::string command;
  std::string data_path;
  CsvOptions csv;
  SamplerConfig sampler;
  std::string output;

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig r;
    r.command = j.value("command", std::string());
    r.data_path = j.value("data", std::string());
    r.output = j.value("output", std::string());
    if (j.contains("responses")) r.csv.responses = j.at("responses").get<std::vector<std::string>>();
    if (j.contains("covariates")) r.csv.covariates = j.at("covariates").get<std::vector<std::string>>();
    if (j.contains("log_responses")) r.csv.log_responses = j.at("log_responses").get<std::vector<std::string>>();
    r.csv.missing_marker = j.value("missing_marker", r.csv.missing_marker);
    r.sampler = config_from_json(j.value("sampler", nlohmann::json::object()));
    return r;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config " + path + ": " + e.what());
    }
  }
};

//==============================================================================
// Chain persistence

/// 64-bit FNV-1a hash.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

inline nlohmann::json draws_to_json(const ChainOutput& c) {
  using detail::list_to_json;
  const auto mat = [](const MatrixXd& m) { return detail::to_json_matrix(m); };
  const auto vec = [](const VectorXd& v) { return detail::to_json(v); };
  const auto forest = [](const Forest& f) { return forest_to_json(f); };
  return {{"y_mis", list_to_json(c.y_mis, vec)},
          {"test_predictions", list_to_json(c.test_predictions, mat)},
          {"test_predictive", list_to_json(c.test_predictive, mat)},
          {"b", list_to_json(c.b, mat)},
          {"r", list_to_json(c.r, mat)},
          {"psi", list_to_json(c.psi, vec)},
          {"omega", list_to_json(c.omega, mat)},
          {"split_usage", list_to_json(c.split_usage, vec)},
          {"miss_split_usage", list_to_json(c.miss_split_usage, vec)},
          {"forests", list_to_json(c.forests, forest)},
          {"miss_forests", list_to_json(c.miss_forests, forest)}};
}

inline nlohmann::json chain_to_json(const ChainOutput& c) {
  nlohmann::json draws = draws_to_json(c);
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& cell : c.missing_cells) cells.push_back({cell[0], cell[1]});
  return {{"format", "missbart-chain"},
          {"version", kChainFormatVersion},
          {"checksum", hex64(fnv1a(draws.dump()))},
          {"model", c.model},
          {"n", c.n},
          {"p", c.p},
          {"q", c.q},
          {"config", config_to_json(c.config)},
          {"scaler", {{"lower", detail::to_json(c.scaler.lower())}, {"upper", detail::to_json(c.scaler.upper())}}},
          {"x_names", c.x_names},
          {"y_names", c.y_names},
          {"x_train", detail::to_json_matrix(c.x_train)},
          {"missing_cells", cells},
          {"train_prediction_mean", detail::to_json_matrix(c.train_prediction_mean)},
          {"y_tilde_mean", detail::to_json_matrix(c.y_tilde_mean)},
          {"interactions", detail::to_json_matrix(c.interactions)},
          {"miss_interactions", detail::to_json_matrix(c.miss_interactions)},
          {"detection", detail::to_json_matrix(c.detection)},
          {"z_center", detail::to_json(c.z_center)},
          {"z_scale", detail::to_json(c.z_scale)},
          {"y_mis_acceptance", detail::num(c.y_mis_acceptance)},
          {"tree_acceptance", detail::num(c.tree_acceptance)},
          {"chains", c.chains},
          {"wall_seconds", c.wall_seconds},
          {"draws", std::move(draws)}};
}

inline ChainOutput chain_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "missbart-chain") throw DataError("not a chain file");
  const int version = j.at("version").get<int>();
  if (version != kChainFormatVersion) {
    throw DataError("chain format version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kChainFormatVersion) + ")");
  }
  const auto& draws = j.at("draws");
  if (hex64(fnv1a(draws.dump())) != j.at("checksum").get<std::string>()) throw DataError("chain checksum mismatch");
  ChainOutput c;
  c.model = j.at("model").get<std::string>();
  c.n = j.at("n").get<Eigen::Index>();
  c.p = j.at("p").get<Eigen::Index>();
  c.q = j.at("q").get<Eigen::Index>();
  c.config = config_from_json(j.at("config"));
  c.scaler = ResponseScaler(detail::vector_from(j.at("scaler").at("lower")), detail::vector_from(j.at("scaler").at("upper")));
  c.x_names = j.at("x_names").get<std::vector<std::string>>();
  c.y_names = j.at("y_names").get<std::vector<std::string>>();
  c.x_train = detail::matrix_from<PredictorMatrix>(j.at("x_train"));
  for (const auto& cell : j.at("missing_cells")) c.missing_cells.push_back({cell[0].get<int>(), cell[1].get<int>()});
  c.train_prediction_mean = detail::matrix_from(j.at("train_prediction_mean"));
  c.y_tilde_mean = detail::matrix_from(j.at("y_tilde_mean"));
  c.interactions = detail::matrix_from(j.at("interactions"));
  c.miss_interactions = detail::matrix_from(j.at("miss_interactions"));
  c.detection = detail::matrix_from(j.at("detection"));
  c.z_center = detail::vector_from(j.at("z_center"));
  c.z_scale = detail::vector_from(j.at("z_scale"));
  c.y_mis_acceptance = detail::get_num(j.at("y_mis_acceptance"));
  c.tree_acceptance = detail::get_num(j.at("tree_acceptance"));
  c.chains = j.at("chains").get<int>();
  c.wall_seconds = j.at("wall_seconds").get<double>();
  const auto mat = [](const nlohmann::json& e) { return detail::matrix_from(e); };
  const auto vec = [](const nlohmann::json& e) { return detail::vector_from(e); };
  const int p = static_cast<int>(c.p);
  c.y_mis = detail::list_from<VectorXd>(draws.at("y_mis"), vec);
  c.test_predictions = detail::list_from<MatrixXd>(draws.at("test_predictions"), mat);
  c.test_predictive = detail::list_from<MatrixXd>(draws.at("test_predictive"), mat);
  c.b = detail::list_from<MatrixXd>(draws.at("b"), mat);
  c.r = detail::list_from<MatrixXd>(draws.at("r"), mat);
  c.psi = detail::list_from<VectorXd>(draws.at("psi"), vec);
  c.omega = detail::list_from<MatrixXd>(draws.at("omega"), mat);
  c.split_usage = detail::list_from<VectorXd>(draws.at("split_usage"), vec);
  c.miss_split_usage = detail::list_from<VectorXd>(draws.at("miss_split_usage"), vec);
  c.forests = detail::list_from<Forest>(draws.at("forests"), [p](const nlohmann::json& e) { return forest_from_json(e, p); });
  c.miss_forests = detail::list_from<Forest>(draws.at("miss_forests"), [p](const nlohmann::json& e) { return forest_from_json(e, p); });
  return c;
}

inline std::string chain_checksum(const ChainOutput& c) { return hex64(fnv1a(draws_to_json(c).dump())); }

/// Written to a temporary file and renamed, so a failed save leaves no partial file.
inline void save_chain(const std::string& path, const ChainOutput& c) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write " + tmp);
    out << chain_to_json(c).dump() << '\n';
    if (!out) throw DataError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot move " + tmp + " to " + path);
}

inline ChainOutput load_chain(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open chain file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("chain file " + path + " is unreadable or truncated: " + e.what());
  }
  try {
    return chain_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("chain file " + path + ": " + e.what());
  }
}

//==============================================================================
// Exports

enum class ExportKind : std::uint8_t { imputations, intervals, metrics, importance, interactions, pdp, detection };

inline ExportKind parse_export_kind(const std::string& s) {
  static const std::vector<std::pair<std::string, ExportKind>> kinds = {
      {"imputations", ExportKind::imputations}, {"intervals", ExportKind::intervals},
      {"metrics", ExportKind::metrics},         {"importance", ExportKind::importance},
      {"interactions", ExportKind::interactions}, {"pdp", ExportKind::pdp},
      {"detection", ExportKind::detection}};
  for (const auto& [name, kind] : kinds) {
    if (name == s) return kind;
  }
  throw UsageError("unknown export kind '" + s + "'");
}

inline std::string to_string(ExportKind k) {
  switch (k) {
    case ExportKind::imputations: return "imputations";
    case ExportKind::intervals: return "intervals";
    case ExportKind::metrics: return "metrics";
    case ExportKind::importance: return "importance";
    case ExportKind::interactions: return "interactions";
    case ExportKind::pdp: return "pdp";
    case ExportKind::detection: return "detection";
  }
  return "?";
}

struct ExportOptions {
  double level = 0.95;
  std::string forest;  // importance/interactions/pdp: "data" or "missingness"; empty picks a default
  PdpRequest pdp;
  int pdp_points = 20;  // used when pdp.grid is empty
  const std::vector<MetricRecord>* metrics = nullptr;
};

inline void write_export_header(std::ostream& out, ExportKind kind, const std::string& model) {
  out << "# missbart-export schema_version=" << kExportSchemaVersion << " kind=" << to_string(kind)
      << " model=" << model << '\n';
}

inline void write_metric_table(std::ostream& out, const std::vector<MetricRecord>& records) {
  out << "model,fold,split,metric,response,value\n";
  for (const auto& r : records) {
    out << r.model << ',' << r.fold << ',' << r.split << ',' << r.metric << ',' << r.response << ','
        << format_double(r.value) << '\n';
  }
}

namespace detail {

inline std::vector<std::string> missingness_names(const ChainOutput& c) {
  std::vector<std::string> names = c.x_names;
  names.insert(names.end(), c.y_names.begin(), c.y_names.end());
  return names;
}

inline bool use_missingness_forest(const ChainOutput& c, const std::string& choice) {
  if (choice == "missingness") {
    if (c.model != "missbart2") throw UsageError("only missBART2 fits have a missingness forest");
    return true;
  }
  if (choice == "data") return false;
  if (!choice.empty()) throw UsageError("forest must be 'data' or 'missingness'");
  return c.model == "missbart2";
}

/// Missingness-forest predictor matrix [X, posterior mean Y~] in the units the forest uses.
inline PredictorMatrix missingness_base(const ChainOutput& c) {
  PredictorMatrix w(c.n, c.q + c.p);
  w << MatrixXd(c.x_train), c.y_tilde_mean;
  return w;
}

}  // namespace detail

inline void export_results(std::ostream& out, const ChainOutput& c, ExportKind kind, const ExportOptions& opt = {}) {
  if (c.draws() == 0) throw DataError("export: the chain holds no draws");
  write_export_header(out, kind, c.model);
  switch (kind) {
    case ExportKind::imputations: {
      out << "row,response,mean,lower,upper\n";
      const VectorXd mean = c.y_mis_mean();
      std::vector<double> v(c.y_mis.size());
      for (std::size_t k = 0; k < c.missing_cells.size(); ++k) {
        for (std::size_t d = 0; d < c.y_mis.size(); ++d) v[d] = c.y_mis[d](static_cast<Eigen::Index>(k));
        std::sort(v.begin(), v.end());
        const auto [i, j] = c.missing_cells[k];
        out << i + 1 << ',' << c.y_names[static_cast<std::size_t>(j)] << ',' << format_double(mean(static_cast<Eigen::Index>(k))) << ','
            << format_double(sorted_quantile(v, 0.5 * (1.0 - opt.level))) << ','
            << format_double(sorted_quantile(v, 0.5 * (1.0 + opt.level))) << '\n';
      }
      break;
    }
    case ExportKind::intervals: {
      if (c.b.empty()) throw UsageError("intervals export needs missBART1 coefficient draws");
      const auto iv = posterior_intervals(c.b, opt.level);
      std::vector<std::string> rows{"(Intercept)"};
      rows.insert(rows.end(), c.x_names.begin(), c.x_names.end());
      rows.insert(rows.end(), c.y_names.begin(), c.y_names.end());
      MatrixXd mean = MatrixXd::Zero(c.b.front().rows(), c.b.front().cols());
      for (const auto& b : c.b) mean += b;
      mean /= static_cast<double>(c.b.size());
      out << "predictor,response,mean,lower,upper,excludes_zero\n";
      for (std::size_t i = 0; i < iv.size(); ++i) {
        for (std::size_t j = 0; j < iv[i].size(); ++j) {
          out << rows[i] << ',' << c.y_names[j] << ',' << format_double(mean(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << ','
              << format_double(iv[i][j].lower) << ',' << format_double(iv[i][j].upper) << ','
              << (iv[i][j].excludes_zero ? 1 : 0) << '\n';
        }
      }
      break;
    }
    case ExportKind::metrics:
      if (opt.metrics == nullptr) throw UsageError("metrics export needs cross-validation records");
      write_metric_table(out, *opt.metrics);
      break;
    case ExportKind::importance: {
      const bool miss = detail::use_missingness_forest(c, opt.forest);
      const auto& usage = miss ? c.miss_split_usage : c.split_usage;
      const auto names = miss ? detail::missingness_names(c) : c.x_names;
      VectorXd mean = VectorXd::Zero(static_cast<Eigen::Index>(names.size()));
      for (const auto& u : usage) mean += u;
      mean /= static_cast<double>(std::max<std::size_t>(1, usage.size()));
      const double total = mean.sum();
      out << "forest,variable,mean_count,share\n";
      for (std::size_t v = 0; v < names.size(); ++v) {
        const double m = mean(static_cast<Eigen::Index>(v));
        out << (miss ? "missingness" : "data") << ',' << names[v] << ',' << format_double(m) << ','
            << format_double(total > 0.0 ? m / total : 0.0) << '\n';
      }
      break;
    }
    case ExportKind::interactions: {
      const bool miss = detail::use_missingness_forest(c, opt.forest);
      const MatrixXd& m = miss ? c.miss_interactions : c.interactions;
      const auto names = miss ? detail::missingness_names(c) : c.x_names;
      out << "forest,var_a,var_b,mean_count\n";
      for (Eigen::Index a = 0; a < m.rows(); ++a) {
        for (Eigen::Index b = a + 1; b < m.cols(); ++b) {
          out << (miss ? "missingness" : "data") << ',' << names[static_cast<std::size_t>(a)] << ','
              << names[static_cast<std::size_t>(b)] << ',' << format_double(m(a, b)) << '\n';
        }
      }
      break;
    }
    case ExportKind::pdp: {
      const bool detection = opt.pdp.type == CurveType::detection_pdp || opt.pdp.type == CurveType::detection_ice;
      if (detection && c.model != "missbart2") throw UsageError("detection curves need a missBART2 fit");
      const auto& forests = detection ? c.miss_forests : c.forests;
      if (forests.empty()) throw UsageError("pdp export needs stored forests");
      const PredictorMatrix base = detection ? detail::missingness_base(c) : c.x_train;
      PdpRequest req = opt.pdp;
      if (req.grid.empty()) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (Eigen::Index r = 0; r < base.rows(); ++r) {
          const double v = base(r, req.var);
          if (std::isnan(v)) continue;
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        for (int k = 0; k < opt.pdp_points; ++k) req.grid.push_back(lo + (hi - lo) * k / std::max(1, opt.pdp_points - 1));
      }
      const ResponseScaler& s = c.scaler;
      const int resp = req.response;
      const std::function<double(double)> link = detection ? std::function<double(double)>([](double v) { return norm_cdf(v); })
                                                           : std::function<double(double)>([&s, resp](double v) { return s.inverse(v, resp); });
      const PdpResult res = pdp_ice(std::span<const Forest>(forests), base, req, link);
      const bool ice = req.type == CurveType::ice || req.type == CurveType::detection_ice;
      out << "curve,row,value,estimate\n";
      for (std::size_t k = 0; k < req.grid.size(); ++k) {
        out << "pdp,," << format_double(req.grid[k]) << ',' << format_double(res.pdp(static_cast<Eigen::Index>(k))) << '\n';
      }
      if (ice) {
        for (std::size_t r = 0; r < res.rows.size(); ++r) {
          for (std::size_t k = 0; k < req.grid.size(); ++k) {
            out << "ice," << res.rows[r] + 1 << ',' << format_double(req.grid[k]) << ','
                << format_double(res.ice(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k))) << '\n';
          }
        }
      }
      break;
    }
    case ExportKind::detection: {
      if (c.detection.size() == 0) throw UsageError("detection export needs a missBART2 fit");
      out << "row,response,probability\n";
      for (Eigen::Index i = 0; i < c.detection.rows(); ++i) {
        for (Eigen::Index j = 0; j < c.detection.cols(); ++j) {
          out << i + 1 << ',' << c.y_names[static_cast<std::size_t>(j)] << ',' << format_double(c.detection(i, j)) << '\n';
        }
      }
      break;
    }
  }
}

inline void export_results(const std::string& path, const ChainOutput& c, ExportKind kind, const ExportOptions& opt = {}) {
  std::ostringstream buf;
  export_results(buf, c, kind, opt);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << buf.str();
}

}  // namespace missbart
