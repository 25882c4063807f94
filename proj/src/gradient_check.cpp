#include "memsum/autodiff/gradient_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace memsum::ad {

GradientCheckResult gradient_check(const GraphBuilder& builder, ParameterStore<double>& params,
                                   double h, std::size_t max_coordinates, std::uint64_t seed) {
  params.zero_grad();
  {
    Graph<double> g(true, false);
    Var root = builder(g);
    g.backward(root);
  }

  struct Coord {
    Parameter<double>* param;
    std::size_t index;
  };
  std::vector<Coord> coords;
  for (const auto& p : params.all()) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) coords.push_back({p.get(), i});
  }
  if (coords.size() > max_coordinates) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coordinates);
  }

  auto evaluate = [&] {
    Graph<double> g(false, false);
    return g.item(builder(g));
  };

  GradientCheckResult result;
  for (const auto& [param, index] : coords) {
    const double analytic = param->grad[index];
    const double saved = param->value[index];
    param->value[index] = saved + h;
    const double plus = evaluate();
    param->value[index] = saved - h;
    const double minus = evaluate();
    param->value[index] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double err = std::abs(analytic - numeric) / denom;
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_parameter = param->name + "[" + std::to_string(index) + "]";
    }
    ++result.coordinates_checked;
  }
  params.zero_grad();
  return result;
}

}  // namespace memsum::ad
