#pragma once

#include <cstdint>
#include <functional>

#include "memsum/autodiff/graph.hpp"
#include "memsum/autodiff/parameters.hpp"

namespace memsum::ad {

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::string worst_parameter;
};

/// Builds a scalar loss on a fresh graph. Must be deterministic.
using GraphBuilder = std::function<Var(Graph<double>&)>;

/// Compares reverse-mode gradients of the builder's root against central
/// differences (f(x+h) - f(x-h)) / 2h on up to `max_coordinates` randomly
/// sampled trainable coordinates. Relative error uses max(|a|, |b|, 1e-8).
GradientCheckResult gradient_check(const GraphBuilder& builder, ParameterStore<double>& params,
                                   double h = 1e-5, std::size_t max_coordinates = 200,
                                   std::uint64_t seed = 7);

}  // namespace memsum::ad
