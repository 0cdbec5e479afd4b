// Calibrates one free parameter per response of a recipe template so that the
// observed proportion on a large population matches the template's
// "target_observed", then writes the completed recipe.
//
// Template "calibrate" block:
//   parameter: "intercept" (probit_reg), "offset" (probit_bart_trees) or
//              "threshold" (step_tree, with "index")
//   n, seed:   population size and replicate seed used for the search
//   lo, hi:    search bracket (defaults depend on the parameter)

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>

#include "missbart/sim.hpp"

namespace {

using missbart::SimRecipe;
using nlohmann::json;

double observed_fraction(const json& recipe, Eigen::Index j, std::uint64_t seed) {
  const SimRecipe r = missbart::recipe_from_json(recipe);
  return missbart::generate(r, seed).observed_fraction()(j);
}

json::json_pointer parameter_path(const std::string& parameter, int index, Eigen::Index j) {
  if (parameter == "intercept") return json::json_pointer("/missingness/coefficients/0/" + std::to_string(j));
  if (parameter == "offset") return json::json_pointer("/missingness/offset/" + std::to_string(j));
  if (parameter == "threshold") return json::json_pointer("/missingness/thresholds/" + std::to_string(index));
  throw missbart::UsageError("unknown calibration parameter '" + parameter + "'");
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibrate simulation recipe fixtures to target observed proportions"};
  std::string in_path;
  std::string out_path;
  app.add_option("template", in_path, "recipe template")->required();
  app.add_option("output", out_path, "calibrated recipe")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    std::ifstream in(in_path);
    if (!in) throw missbart::DataError("cannot open " + in_path);
    json recipe = json::parse(in);
    const json cal = recipe.at("calibrate");
    const std::string parameter = cal.at("parameter").get<std::string>();
    const int index = cal.value("index", 0);
    const std::uint64_t seed = cal.value("seed", std::uint64_t{20240611});
    const auto targets = recipe.at("target_observed").get<std::vector<double>>();
    json population = recipe;
    population["n"] = cal.value("n", 200000);
    double lo = cal.value("lo", -6.0);
    double hi = cal.value("hi", 6.0);
    if (parameter == "threshold") {
      const auto t = recipe.at("missingness").at("thresholds").get<std::vector<double>>();
      lo = cal.value("lo", t.at(static_cast<std::size_t>(index - 1)));
      hi = cal.value("hi", t.at(static_cast<std::size_t>(index + 1)));
    }
    std::vector<double> achieved;
    for (std::size_t j = 0; j < targets.size(); ++j) {
      const auto ptr = parameter_path(parameter, index, static_cast<Eigen::Index>(j));
      auto eval = [&](double v) {
        population[ptr] = v;
        return observed_fraction(population, static_cast<Eigen::Index>(j), seed) - targets[j];
      };
      double a = lo;
      double b = hi;
      double fa = eval(a);
      const double fb = eval(b);
      if (fa * fb > 0.0) throw missbart::NumericError("target not bracketed for response " + std::to_string(j + 1));
      for (int it = 0; it < 60 && b - a > 1e-7; ++it) {
        const double mid = 0.5 * (a + b);
        const double fm = eval(mid);
        if ((fm < 0.0) == (fa < 0.0)) {
          a = mid;
          fa = fm;
        } else {
          b = mid;
        }
      }
      const double v = round6(0.5 * (a + b));
      population[ptr] = v;
      recipe[ptr] = v;
      achieved.push_back(round6(observed_fraction(population, static_cast<Eigen::Index>(j), seed)));
      std::cerr << recipe.value("name", in_path) << ": response " << j + 1 << " " << parameter << " = " << v
                << ", observed " << achieved.back() << " (target " << targets[j] << ")\n";
    }
    recipe["calibrated_observed"] = achieved;
    std::ofstream out(out_path);
    if (!out) throw missbart::DataError("cannot write " + out_path);
    out << std::setw(2) << recipe << '\n';
  } catch (const missbart::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
