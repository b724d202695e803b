#include "mufasa/nn/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace mufasa::nn {

bool MlpSpec::valid() const {
  if (widths.size() < 2) return false;
  for (std::size_t w : widths)
    if (w == 0) return false;
  return true;
}

const Tensor& param_at(const Parameters& params, const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) throw std::out_of_range("missing parameter '" + name + "'");
  return it->second;
}

void glorot_fill(Tensor& tensor, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : tensor.values()) v = u(rng);
}

namespace {

void fill_weight(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng, Init init) {
  switch (init) {
    case Init::Glorot:
      glorot_fill(w, fan_in, fan_out, rng);
      break;
    case Init::Identity: {
      // Ones on the diagonal of the leading [out, in] block, including conv kernel centres.
      const std::size_t out = w.dim(0), in = w.dim(1);
      const std::size_t taps = w.size() / (out * in);
      const std::size_t centre = taps / 2;
      for (std::size_t i = 0; i < std::min(out, in); ++i) w[(i * in + i) * taps + centre] = 1.0;
      break;
    }
    case Init::Zero:
      break;
  }
}

}  // namespace

void init_mlp(Parameters& params, const std::string& prefix, const MlpSpec& spec, Rng& rng,
              Init init) {
  if (!spec.valid()) throw std::invalid_argument("invalid MLP spec for '" + prefix + "'");
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::size_t in = spec.widths[l], out = spec.widths[l + 1];
    Tensor w({out, in});
    fill_weight(w, in, out, rng, init);
    const std::string base = prefix + ".l" + std::to_string(l);
    params[base + ".weight"] = std::move(w);
    params[base + ".bias"] = Tensor({out});
  }
}

Var mlp_forward(Tape& t, const Parameters& params, const std::string& prefix, const MlpSpec& spec,
                Var x) {
  const auto& s = t.shape(x);
  if (s.size() != 2 || s[1] != spec.input_dim())
    throw std::invalid_argument(prefix + ": input " + shape_string(s) + " does not match width " +
                                std::to_string(spec.input_dim()));
  Var h = x;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    const Var w = t.parameter(base + ".weight", param_at(params, base + ".weight"));
    const Var b = t.parameter(base + ".bias", param_at(params, base + ".bias"));
    h = linear(t, h, w, b);
    if (l + 1 < spec.layers()) h = relu(t, h);
  }
  return h;
}

void init_conv(Parameters& params, const std::string& prefix, std::size_t in, std::size_t out,
               std::size_t kernel, Rng& rng, Init init) {
  Tensor w({out, in, kernel, kernel});
  fill_weight(w, in * kernel * kernel, out * kernel * kernel, rng, init);
  params[prefix + ".weight"] = std::move(w);
  params[prefix + ".bias"] = Tensor({out});
}

Var conv_forward(Tape& t, const Parameters& params, const std::string& prefix, Var img) {
  const Var w = t.parameter(prefix + ".weight", param_at(params, prefix + ".weight"));
  const Var b = t.parameter(prefix + ".bias", param_at(params, prefix + ".bias"));
  return conv2d(t, img, w, b);
}

}  // namespace mufasa::nn
