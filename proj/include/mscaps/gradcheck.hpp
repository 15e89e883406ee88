#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mscaps/tensor.hpp"

namespace mscaps {

/// ||a - n|| / max(||a||, ||n||, 1e-12) over the checked entries.
double relative_error(const Tensor& analytic, const Tensor& numeric);

/// Central differences of a scalar function at x, every entry.
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double step = 1e-5);

struct GradCheckResult {
  std::string name;
  double rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Finite-difference check of every differentiable op, AFC, routing and the
/// full patch -> AFC -> capsules -> margin loss composite (full-gradient
/// routing). Composite entries use `composite_tolerance`.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, double op_tolerance,
                                                 double composite_tolerance);

}  // namespace mscaps
