#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "missbart/missbart.hpp"

namespace {

using namespace missbart;

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct FitArgs {
  std::string config;
  std::string data;
  std::vector<std::string> responses;
  std::vector<std::string> covariates;
  std::vector<std::string> log_responses;
  std::string marker = "NA";
  std::string out;
  std::string test_data;
  std::optional<int> trees;
  std::optional<int> miss_trees;
  std::optional<int> burn_in;
  std::optional<int> post_burn_in;
  std::optional<int> thin;
  std::optional<int> chains;
  std::optional<std::uint64_t> seed;
  std::optional<double> nu;
  std::optional<double> rho_tau;
  std::optional<double> rho_mu;
  std::optional<double> sigma_y;
  std::vector<double> psi;
  bool no_forests = false;
};

void add_sampler_flags(CLI::App* app, FitArgs& a) {
  app->add_option("--config", a.config, "JSON run configuration; flags override it");
  app->add_option("--trees", a.trees, "data-model trees K");
  app->add_option("--burn-in", a.burn_in, "burn-in iterations");
  app->add_option("--post-burn-in", a.post_burn_in, "post-burn-in iterations");
  app->add_option("--thin", a.thin, "keep every thin-th post-burn-in draw");
  app->add_option("--chains", a.chains, "independent chains");
  app->add_option("--seed", a.seed, "random seed");
  app->add_option("--nu", a.nu, "Wishart prior degrees of freedom");
  app->add_option("--rho-tau", a.rho_tau, "residual-precision calibration probability");
  app->add_option("--rho-mu", a.rho_mu, "leaf-prior calibration probability");
  app->add_option("--psi", a.psi, "alpha0 beta0 alpha_x beta_x alpha_y beta_y")->expected(6);
  app->add_option("--miss-trees", a.miss_trees, "missingness trees K_m (missBART2)");
  app->add_option("--sigma-y", a.sigma_y, "random-walk step for missing responses (missBART2)");
}

void add_data_flags(CLI::App* app, FitArgs& a) {
  app->add_option("--data", a.data, "CSV file with a header row");
  app->add_option("--responses", a.responses, "response column names")->delimiter(',');
  app->add_option("--covariates", a.covariates, "covariate column names (default: all other columns)")->delimiter(',');
  app->add_option("--log", a.log_responses, "responses to log-transform")->delimiter(',');
  app->add_option("--na", a.marker, "missing-value marker");
}

RunConfig resolve(const FitArgs& a, const std::string& command) {
  RunConfig r = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  r.command = command;
  if (!a.data.empty()) r.data_path = a.data;
  if (!a.responses.empty()) r.csv.responses = a.responses;
  if (!a.covariates.empty()) r.csv.covariates = a.covariates;
  if (!a.log_responses.empty()) r.csv.log_responses = a.log_responses;
  if (a.marker != "NA") r.csv.missing_marker = a.marker;
  if (!a.out.empty()) r.output = a.out;
  SamplerConfig& s = r.sampler;
  if (a.trees) s.n_trees = *a.trees;
  if (a.miss_trees) s.n_miss_trees = *a.miss_trees;
  if (a.burn_in) s.burn_in = *a.burn_in;
  if (a.post_burn_in) s.post_burn_in = *a.post_burn_in;
  if (a.thin) s.thin = *a.thin;
  if (a.chains) s.chains = *a.chains;
  if (a.seed) s.seed = *a.seed;
  if (a.nu) s.nu = *a.nu;
  if (a.rho_tau) s.rho_tau = *a.rho_tau;
  if (a.rho_mu) s.rho_mu = *a.rho_mu;
  if (a.sigma_y) s.sigma_y = *a.sigma_y;
  if (a.psi.size() == 6) s.psi = PsiHyperPrior{a.psi[0], a.psi[1], a.psi[2], a.psi[3], a.psi[4], a.psi[5]};
  if (a.no_forests) s.store_forests = false;
  s.validate();
  return r;
}

void log_line(const std::string& msg) { std::cerr << "[missbart] " << msg << '\n'; }

int run_fit(const FitArgs& a, const std::string& command) {
  const RunConfig r = resolve(a, command);
  if (r.data_path.empty()) throw UsageError("--data is required");
  if (r.output.empty()) throw UsageError("--out is required");
  const Dataset data = load_csv(r.data_path, r.csv);
  log_line("loaded " + std::to_string(data.n()) + " rows, " + std::to_string(data.p()) + " responses, " +
           std::to_string(data.q()) + " covariates");
  std::optional<PredictorMatrix> x_test;
  if (!a.test_data.empty()) {
    CsvOptions xonly;
    xonly.covariates = data.x_names;
    xonly.missing_marker = r.csv.missing_marker;
    x_test = load_csv(a.test_data, xonly).x;
  }
  const PredictorMatrix* xt = x_test ? &*x_test : nullptr;
  ChainOutput out;
  if (command == "fit-missbart1") {
    out = run_missbart1(data, r.sampler, xt);
  } else if (command == "fit-missbart2") {
    out = run_missbart2(data, r.sampler, xt);
  } else {
    out = run_mvbart_cc(data, r.sampler, xt);
  }
  save_chain(r.output, out);
  std::ostringstream msg;
  msg << "stored " << out.draws() << " draws in " << r.output << " (" << out.wall_seconds << " s, checksum "
      << chain_checksum(out) << ")";
  log_line(msg.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multivariate BART with missing responses"};
  app.require_subcommand(1);

  FitArgs fit1;
  FitArgs fit2;
  FitArgs fitcc;
  std::vector<std::pair<CLI::App*, FitArgs*>> fits;
  for (auto [name, args, help] : {std::tuple{"fit-missbart1", &fit1, "fit missBART1 (probit-regression missingness)"},
                                  std::tuple{"fit-missbart2", &fit2, "fit missBART2 (probit-BART missingness)"},
                                  std::tuple{"fit-mvbart-cc", &fitcc, "fit complete-case multivariate BART"}}) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_data_flags(sub, *args);
    add_sampler_flags(sub, *args);
    sub->add_option("--out", args->out, "chain file to write");
    sub->add_option("--test-data", args->test_data, "CSV of covariates to predict");
    sub->add_flag("--no-forests", args->no_forests, "do not store forest draws (disables PDP exports)");
    fits.emplace_back(sub, args);
  }

  std::string sim_recipe;
  std::uint64_t sim_seed = 1;
  std::string sim_out;
  std::string sim_truth;
  CLI::App* sim = app.add_subcommand("simulate", "generate a dataset from a recipe file");
  sim->add_option("--recipe", sim_recipe, "recipe JSON")->required();
  sim->add_option("--seed", sim_seed, "replicate seed");
  sim->add_option("--out", sim_out, "observed-data CSV")->required();
  sim->add_option("--truth", sim_truth, "complete-data CSV");

  FitArgs cv_args;
  std::string cv_recipe;
  std::uint64_t cv_data_seed = 1;
  int cv_folds = 4;
  int cv_max_folds = 0;
  std::vector<std::string> cv_models{"missbart1", "missbart2", "mvbart_cc", "unibart_cc"};
  CLI::App* cv = app.add_subcommand("cv", "k-fold cross-validation on a simulated dataset");
  cv->add_option("--recipe", cv_recipe, "recipe JSON")->required();
  cv->add_option("--data-seed", cv_data_seed, "replicate seed for the simulated data");
  cv->add_option("--folds", cv_folds, "number of folds");
  cv->add_option("--max-folds", cv_max_folds, "evaluate only the first folds (0 = all)");
  cv->add_option("--models", cv_models, "models to compare")->delimiter(',');
  cv->add_option("--out", cv_args.out, "metric table")->required();
  add_sampler_flags(cv, cv_args);

  std::string diag_chain;
  std::string diag_what;
  std::string diag_out;
  ExportOptions diag_opt;
  std::string diag_type = "pdp";
  std::vector<double> diag_grid;
  CLI::App* diag = app.add_subcommand("diagnose", "export tables from a stored chain");
  diag->add_option("--chain", diag_chain, "chain file")->required();
  diag->add_option("--what", diag_what, "imputations|intervals|importance|interactions|pdp|detection")->required();
  diag->add_option("--out", diag_out, "output file (default: stdout)");
  diag->add_option("--level", diag_opt.level, "interval level");
  diag->add_option("--forest", diag_opt.forest, "data|missingness");
  diag->add_option("--var", diag_opt.pdp.var, "PDP variable index (0-based)");
  diag->add_option("--response", diag_opt.pdp.response, "PDP response index (0-based)");
  diag->add_option("--type", diag_type, "pdp|ice|detection-pdp|detection-ice");
  diag->add_option("--grid", diag_grid, "PDP grid values")->delimiter(',');
  diag->add_option("--points", diag_opt.pdp_points, "PDP grid size when --grid is absent");
  diag->add_option("--ice-rows", diag_opt.pdp.ice_rows, "ICE subsample size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    for (auto [sub, args] : fits) {
      if (sub->parsed()) return run_fit(*args, sub->get_name());
    }
    if (sim->parsed()) {
      const SimRecipe recipe = load_recipe(sim_recipe);
      const GeneratedDataset g = generate(recipe, sim_seed);
      save_csv(sim_out, g.observed());
      if (!sim_truth.empty()) {
        save_csv(sim_truth, Dataset{g.x_complete, g.y_complete, g.x_names, g.y_names});
      }
      const VectorXd frac = g.observed_fraction();
      std::ostringstream msg;
      msg << "observed fraction per response:";
      for (Eigen::Index j = 0; j < frac.size(); ++j) msg << ' ' << frac(j);
      log_line(msg.str());
      return 0;
    }
    if (cv->parsed()) {
      const RunConfig r = resolve(cv_args, "cv");
      const SimRecipe recipe = load_recipe(cv_recipe);
      const GeneratedDataset g = generate(recipe, cv_data_seed);
      std::vector<CvModel> models;
      for (const auto& m : cv_models) models.push_back(parse_cv_model(m));
      Rng rng(r.sampler.seed, 0x6376ULL);
      const CvResult res = run_cv(g, models, cv_folds, r.sampler, rng, cv_max_folds);
      std::ofstream out(r.output);
      if (!out) throw DataError("cannot write " + r.output);
      write_export_header(out, ExportKind::metrics, "cv");
      write_metric_table(out, res.records);
      log_line("wrote " + std::to_string(res.records.size()) + " metric rows to " + r.output);
      return 0;
    }
    if (diag->parsed()) {
      const ChainOutput chain = load_chain(diag_chain);
      if (diag_type == "pdp") {
        diag_opt.pdp.type = CurveType::pdp;
      } else if (diag_type == "ice") {
        diag_opt.pdp.type = CurveType::ice;
      } else if (diag_type == "detection-pdp") {
        diag_opt.pdp.type = CurveType::detection_pdp;
      } else if (diag_type == "detection-ice") {
        diag_opt.pdp.type = CurveType::detection_ice;
      } else {
        throw UsageError("unknown curve type '" + diag_type + "'");
      }
      diag_opt.pdp.grid = diag_grid;
      const ExportKind kind = parse_export_kind(diag_what);
      if (diag_out.empty()) {
        export_results(std::cout, chain, kind, diag_opt);
      } else {
        export_results(diag_out, chain, kind, diag_opt);
      }
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DomainError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  }
  return 0;
}
