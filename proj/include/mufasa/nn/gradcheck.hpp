#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mufasa/nn/tensor.hpp"

namespace mufasa::nn {

/// Evaluates a scalar loss at `params`; when `grads` is non-null it also fills the analytic
/// gradient of every parameter.
using LossFn = std::function<double(const Parameters& params, Parameters* grads)>;

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  /// Denominator floor so coordinates whose true gradient is ~0 are judged absolutely.
  double abs_floor = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded random subset per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradFailure {
  std::string parameter;
  std::size_t index;
  double analytic;
  double numeric;
  double rel_error;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::vector<GradFailure> failures;
  bool passed() const { return failures.empty() && checked > 0; }
};

double relative_error(double analytic, double numeric, double abs_floor);

GradCheckReport grad_check(const LossFn& f, const Parameters& params,
                           const GradCheckOptions& options = {});

}  // namespace mufasa::nn
