#include "mufasa/nn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace mufasa::nn {

void adam_step(AdamState& state, Parameters& params, const Parameters& grads) {
  for (const auto& [name, g] : grads) {
    const auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("adam: gradient for unknown parameter '" + name + "'");
    if (it->second.shape() != g.shape())
      throw std::invalid_argument("adam: gradient shape " + shape_string(g.shape()) +
                                  " does not match parameter '" + name + "'");
    if (!g.all_finite()) throw std::runtime_error("adam: non-finite gradient in parameter '" + name + "'");
  }

  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    auto [mit, m_new] = state.m.try_emplace(name, p.shape());
    auto [vit, v_new] = state.v.try_emplace(name, p.shape());
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double gi = g[i];
      if (!c.decoupled) gi += c.weight_decay * p[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
      if (c.decoupled) p[i] -= c.lr * c.weight_decay * p[i];
      p[i] -= c.lr * update;
    }
  }
}

}  // namespace mufasa::nn
