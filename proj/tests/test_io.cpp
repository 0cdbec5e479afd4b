#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "missbart/io.hpp"
#include "missbart/missbart1.hpp"
#include "missbart/missbart2.hpp"
#include "missbart/sim.hpp"
#include "test_util.hpp"

using namespace missbart;

namespace {

Dataset parse(const std::string& text, const CsvOptions& opt) {
  std::istringstream in(text);
  return parse_csv(in, opt);
}

CsvOptions responses(std::vector<std::string> names) {
  CsvOptions o;
  o.responses = std::move(names);
  return o;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("missbart_io_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Dataset small_data(std::uint64_t seed) {
  SimRecipe r = load_recipe(testutil::fixture("mnar1.json"));
  r.n = 60;
  return generate(r, seed).observed();
}

SamplerConfig tiny_config(std::uint64_t seed) {
  SamplerConfig c;
  c.n_trees = 4;
  c.n_miss_trees = 3;
  c.burn_in = 10;
  c.post_burn_in = 100;
  c.seed = seed;
  return c;
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::string export_string(const ChainOutput& c, ExportKind k, const ExportOptions& opt = {}) {
  std::ostringstream out;
  export_results(out, c, k, opt);
  return out.str();
}

}  // namespace

TEST(Csv, MarkerAndEmptyCellsAreMissing) {
  const Dataset d = parse("x1,x2,y\n1,2,NA\n3,,4\n", responses({"y"}));
  ASSERT_EQ(d.n(), 2);
  EXPECT_TRUE(std::isnan(d.y(0, 0)));
  EXPECT_TRUE(std::isnan(d.x(1, 1)));
  EXPECT_EQ(d.y(1, 0), 4.0);
  EXPECT_EQ(d.m()(0, 0), 0);
  EXPECT_EQ(d.m()(1, 0), 1);
  EXPECT_EQ(d.x_names, (std::vector<std::string>{"x1", "x2"}));
}

TEST(Csv, FullyObservedFile) {
  const Dataset d = parse("a,b,c\n1,2,3\n4,5,6\n7,8,9\n", responses({"b", "c"}));
  EXPECT_EQ(d.m().sum(), 6);
  EXPECT_EQ(d.x(2, 0), 7.0);
  EXPECT_EQ(d.y(1, 1), 6.0);
}

TEST(Csv, LogTransform) {
  CsvOptions o = responses({"y"});
  o.log_responses = {"y"};
  const Dataset d = parse("x,y\n0,10\n1,NA\n", o);
  EXPECT_NEAR(d.y(0, 0), 2.302585, 1e-6);
  EXPECT_DOUBLE_EQ(d.y(0, 0), std::log(10.0));
  EXPECT_TRUE(std::isnan(d.y(1, 0)));
  EXPECT_THROW(parse("x,y\n0,0\n", o), DomainError);
  EXPECT_THROW(parse("x,y\n0,-2\n", o), DomainError);
  o.log_responses = {"x"};
  EXPECT_THROW(parse("x,y\n1,1\n", o), DataError);
}

TEST(Csv, ParseErrorsNameRowAndColumn) {
  try {
    parse("x,y\n1,2\n3,abc\n", responses({"y"}));
    FAIL() << "expected a parse error";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 3"), std::string::npos);
    EXPECT_NE(msg.find("'y'"), std::string::npos);
  }
  EXPECT_THROW(parse("x,y\n1,2x\n", responses({"y"})), DataError);
  EXPECT_THROW(parse("x,y\n1,2,3\n", responses({"y"})), DataError);
  EXPECT_THROW(parse("", responses({"y"})), DataError);
  EXPECT_THROW(parse("x,x\n1,2\n", responses({"x"})), DataError);
  EXPECT_THROW(parse("x,y\n1,2\n", responses({"z"})), DataError);
  EXPECT_THROW(parse("x,y\n1,2\n", CsvOptions{}), UsageError);
  EXPECT_THROW(load_csv(temp_path("absent.csv"), responses({"y"})), DataError);
}

TEST(Csv, CustomMarkerQuotesAndDelimiter) {
  CsvOptions o = responses({"y"});
  o.missing_marker = "-999";
  o.delimiter = ';';
  const Dataset d = parse("\"x\";y\r\n\" 1.5 \";-999\r\n\n2;3\r\n", o);
  ASSERT_EQ(d.n(), 2);
  EXPECT_EQ(d.x(0, 0), 1.5);
  EXPECT_TRUE(std::isnan(d.y(0, 0)));
  EXPECT_EQ(d.y(1, 0), 3.0);
}

TEST(Csv, CovariatesOnlySelectsRemainingResponses) {
  CsvOptions o;
  o.covariates = {"x"};
  const Dataset d = parse("y1,x,y2\n1,2,3\n", o);
  EXPECT_EQ(d.y_names, (std::vector<std::string>{"y1", "y2"}));
  EXPECT_EQ(d.y(0, 1), 3.0);
}

TEST(Csv, WriteThenLoadIsIdempotent) {
  const Dataset d = small_data(1);
  const std::string path = temp_path("roundtrip.csv");
  save_csv(path, d);
  const Dataset a = load_csv(path, responses(d.y_names));
  save_csv(path, a);
  const Dataset b = load_csv(path, responses(d.y_names));
  EXPECT_EQ(a.x, d.x);
  EXPECT_EQ(a.m(), d.m());
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    for (Eigen::Index j = 0; j < d.p(); ++j) {
      if (d.m()(i, j) == 1) {
        EXPECT_EQ(a.y(i, j), d.y(i, j));
      }
    }
  }
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.m(), b.m());
  EXPECT_EQ(a.x_names, b.x_names);
  std::filesystem::remove(path);
}

TEST(TreeJson, ForestRoundTripPreservesPredictions) {
  Rng rng(2);
  TreePrior prior;
  prior.alpha = 0.99;
  prior.beta = 0.5;
  const Forest f = draw_prior_forest(6, 3, 2, 1.0, prior, 9, rng);
  const Forest g = forest_from_json(forest_to_json(f), 2);
  ASSERT_EQ(g.trees.size(), f.trees.size());
  PredictorMatrix x = uniform_matrix(200, 3, rng);
  x(0, 1) = kNaN;
  EXPECT_EQ(f.predict(x), g.predict(x));
  EXPECT_EQ(forest_to_json(g).dump(), forest_to_json(f).dump());
  for (std::size_t k = 0; k < f.trees.size(); ++k) EXPECT_EQ(g.trees[k].num_leaves(), f.trees[k].num_leaves());
}

TEST(TreeJson, MalformedNodeListsRejected) {
  nlohmann::json nodes = nlohmann::json::array();
  nodes.push_back({{"var", 0}, {"cut", 0.5}, {"missing", "left"}});
  nodes.push_back({{"mu", {1.0}}});
  EXPECT_THROW(tree_from_json(nodes, 1), DataError);
  nodes.push_back({{"mu", {2.0}}});
  EXPECT_NO_THROW(tree_from_json(nodes, 1));
  nodes.push_back({{"mu", {3.0}}});
  EXPECT_THROW(tree_from_json(nodes, 1), DataError);
}

TEST(Config, JsonRoundTrip) {
  SamplerConfig c;
  c.n_trees = 17;
  c.burn_in = 3;
  c.seed = 99;
  c.tree_prior.alpha = 0.8;
  c.tree_prior.moves = {0.3, 0.3, 0.3, 0.1};
  c.y_mis_update = YMisUpdate::marginal_block;
  c.psi = PsiHyperPrior{2, 3, 4, 5, 6, 7};
  const SamplerConfig d = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(d), config_to_json(c));
  EXPECT_EQ(d.y_mis_update, YMisUpdate::marginal_block);
  ASSERT_TRUE(d.psi.has_value());
  EXPECT_EQ(d.psi->beta_y, 7.0);
  EXPECT_THROW(config_from_json({{"moves", {0.5, 0.5}}}), UsageError);
  EXPECT_THROW(config_from_json({{"y_mis_update", "gibbs"}}), UsageError);
  EXPECT_EQ(config_from_json({{"thin", 4}}).n_trees, SamplerConfig{}.n_trees);
}

TEST(Config, RunConfigFromJson) {
  const nlohmann::json j = {{"command", "fit-missbart2"},
                            {"data", "in.csv"},
                            {"responses", {"a", "b"}},
                            {"log_responses", {"a"}},
                            {"missing_marker", "."},
                            {"sampler", {{"n_trees", 50}, {"n_miss_trees", 5}}}};
  const RunConfig r = RunConfig::from_json(j);
  EXPECT_EQ(r.command, "fit-missbart2");
  EXPECT_EQ(r.csv.responses.size(), 2u);
  EXPECT_EQ(r.csv.missing_marker, ".");
  EXPECT_EQ(r.sampler.n_trees, 50);
  EXPECT_EQ(r.sampler.miss_trees(2), 5);
  EXPECT_THROW(RunConfig::load(temp_path("absent.json")), UsageError);
}

TEST(Chain, SaveLoadRoundTrip) {
  const ChainOutput c = run_missbart1(small_data(3), tiny_config(4));
  const std::string path = temp_path("chain1.json");
  save_chain(path, c);
  const ChainOutput d = load_chain(path);
  EXPECT_EQ(chain_to_json(d).dump(), chain_to_json(c).dump());
  EXPECT_EQ(d.draws(), c.draws());
  EXPECT_EQ(d.b.size(), c.b.size());
  EXPECT_EQ(d.missing_cells, c.missing_cells);
  EXPECT_EQ(chain_checksum(d), chain_checksum(c));
  std::filesystem::remove(path);
}

TEST(Chain, MissBart2RoundTripKeepsForests) {
  const ChainOutput c = run_missbart2(small_data(5), tiny_config(6));
  const std::string path = temp_path("chain2.json");
  save_chain(path, c);
  const ChainOutput d = load_chain(path);
  ASSERT_EQ(d.miss_forests.size(), c.miss_forests.size());
  const PredictorMatrix w = detail::missingness_base(c);
  EXPECT_EQ(d.miss_forests.back().predict(w), c.miss_forests.back().predict(w));
  EXPECT_EQ(d.forests.back().predict(c.x_train), c.forests.back().predict(c.x_train));
  EXPECT_EQ(chain_to_json(d).dump(), chain_to_json(c).dump());
  std::filesystem::remove(path);
}

TEST(Chain, TruncatedAndForeignFilesRejected) {
  const ChainOutput c = run_mvbart_cc(small_data(7), tiny_config(8));
  const std::string path = temp_path("chain3.json");
  save_chain(path, c);
  const std::string text = slurp(path);
  {
    std::ofstream out(path);
    out << text.substr(0, text.size() / 2);
  }
  EXPECT_THROW(load_chain(path), DataError);
  nlohmann::json j = chain_to_json(c);
  j["version"] = kChainFormatVersion + 1;
  {
    std::ofstream out(path);
    out << j.dump();
  }
  EXPECT_THROW(load_chain(path), DataError);
  j = chain_to_json(c);
  j["draws"]["omega"][0][0][0] = 123.0;
  EXPECT_THROW(chain_from_json(j), DataError);
  EXPECT_THROW(chain_from_json(nlohmann::json{{"format", "other"}}), DataError);
  EXPECT_THROW(load_chain(temp_path("absent_chain.json")), DataError);
  std::filesystem::remove(path);
}

TEST(Chain, SeedsGiveDistinctChecksumsAndRerunsAreIdentical) {
  const Dataset d = small_data(9);
  const ChainOutput a = run_missbart2(d, tiny_config(10));
  const ChainOutput b = run_missbart2(d, tiny_config(10));
  const ChainOutput c = run_missbart2(d, tiny_config(11));
  EXPECT_EQ(chain_checksum(a), chain_checksum(b));
  EXPECT_NE(chain_checksum(a), chain_checksum(c));
  for (ExportKind k : {ExportKind::imputations, ExportKind::importance, ExportKind::detection}) {
    EXPECT_EQ(export_string(a, k), export_string(b, k)) << to_string(k);
  }
}

TEST(Export, KindsParseAndHeaderCarriesSchemaVersion) {
  for (const char* k : {"imputations", "intervals", "metrics", "importance", "interactions", "pdp", "detection"}) {
    EXPECT_EQ(to_string(parse_export_kind(k)), k);
  }
  EXPECT_THROW(parse_export_kind("plots"), UsageError);
  const ChainOutput c = run_missbart1(small_data(12), tiny_config(13));
  const auto l = lines_of(export_string(c, ExportKind::imputations));
  EXPECT_EQ(l.at(0), "# missbart-export schema_version=1 kind=imputations model=missbart1");
  EXPECT_EQ(l.at(1), "row,response,mean,lower,upper");
  EXPECT_EQ(l.size(), 2 + c.missing_cells.size());
}

TEST(Export, IntervalsHaveOneRowPerCoefficient) {
  const ChainOutput c = run_missbart1(small_data(14), tiny_config(15));
  const auto l = lines_of(export_string(c, ExportKind::intervals));
  const std::size_t r = 1 + static_cast<std::size_t>(c.p + c.q);
  EXPECT_EQ(l.size(), 2 + r * static_cast<std::size_t>(c.p));
  EXPECT_EQ(l.at(2).rfind("(Intercept),", 0), 0u);
}

TEST(Export, MissingnessImportanceCoversCovariatesAndResponses) {
  const ChainOutput c = run_missbart2(small_data(16), tiny_config(17));
  const auto imp = lines_of(export_string(c, ExportKind::importance));
  EXPECT_EQ(imp.size(), 2 + static_cast<std::size_t>(c.q + c.p));
  ExportOptions data_forest;
  data_forest.forest = "data";
  EXPECT_EQ(lines_of(export_string(c, ExportKind::importance, data_forest)).size(), 2 + static_cast<std::size_t>(c.q));
  const auto det = lines_of(export_string(c, ExportKind::detection));
  EXPECT_EQ(det.size(), 2 + static_cast<std::size_t>(c.n * c.p));
  const std::size_t k = static_cast<std::size_t>(c.q + c.p);
  EXPECT_EQ(lines_of(export_string(c, ExportKind::interactions)).size(), 2 + k * (k - 1) / 2);
  ExportOptions pdp;
  pdp.pdp.type = CurveType::detection_ice;
  pdp.pdp.var = static_cast<int>(c.q);
  pdp.pdp_points = 5;
  pdp.pdp.ice_rows = 4;
  EXPECT_EQ(lines_of(export_string(c, ExportKind::pdp, pdp)).size(), 2u + 5u + 4u * 5u);
  EXPECT_THROW(export_string(c, ExportKind::intervals), UsageError);
}

TEST(Export, ErrorCases) {
  ChainOutput empty;
  empty.model = "missbart1";
  EXPECT_THROW(export_string(empty, ExportKind::imputations), DataError);
  const ChainOutput c = run_missbart1(small_data(18), tiny_config(19));
  EXPECT_THROW(export_string(c, ExportKind::metrics), UsageError);
  EXPECT_THROW(export_string(c, ExportKind::detection), UsageError);
  ExportOptions miss;
  miss.forest = "missingness";
  EXPECT_THROW(export_string(c, ExportKind::importance, miss), UsageError);
  const std::vector<MetricRecord> recs = {{"oracle", 0, "missing", "rmse", 1, 0.25}};
  ExportOptions m;
  m.metrics = &recs;
  const auto l = lines_of(export_string(c, ExportKind::metrics, m));
  EXPECT_EQ(l.at(2), "oracle,0,missing,rmse,1,0.25");
}
