#include "mufasa/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mufasa::nn {

double relative_error(double analytic, double numeric, double abs_floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const LossFn& f, const Parameters& params,
                           const GradCheckOptions& options) {
  Parameters analytic;
  f(params, &analytic);

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  Parameters probe = params;
  for (auto& [name, tensor] : probe) {
    const auto git = analytic.find(name);
    std::vector<std::size_t> coords(tensor.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_tensor && coords.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double orig = tensor[i];
      tensor[i] = orig + options.h;
      const double up = f(probe, nullptr);
      tensor[i] = orig - options.h;
      const double down = f(probe, nullptr);
      tensor[i] = orig;
      const double numeric = (up - down) / (2.0 * options.h);
      const double a = git == analytic.end() ? 0.0 : git->second[i];
      const double err = relative_error(a, numeric, options.abs_floor);
      ++report.checked;
      report.max_rel_error = std::max(report.max_rel_error, err);
      if (!(err < options.tol)) report.failures.push_back({name, i, a, numeric, err});
    }
  }
  return report;
}

}  // namespace mufasa::nn
