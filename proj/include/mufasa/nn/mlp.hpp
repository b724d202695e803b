#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mufasa/nn/ops.hpp"

namespace mufasa::nn {

/// Layer widths including input and output, e.g. {10, 64, 64}. ReLU sits between layers,
/// never after the last one.
struct MlpSpec {
  std::vector<std::size_t> widths;

  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  std::size_t layers() const { return widths.size() - 1; }
  bool valid() const;
};

enum class Init {
  Glorot,    ///< uniform in +-sqrt(6 / (fan_in + fan_out)), zero bias
  Identity,  ///< eye-like weights (requires square-compatible dims), zero bias
  Zero,
};

using Rng = std::mt19937_64;

/// Adds `<prefix>.l<i>.weight` [out, in] and `<prefix>.l<i>.bias` [out] for each layer.
void init_mlp(Parameters& params, const std::string& prefix, const MlpSpec& spec, Rng& rng,
              Init init = Init::Glorot);

Var mlp_forward(Tape& t, const Parameters& params, const std::string& prefix, const MlpSpec& spec,
                Var x);

/// Adds `<prefix>.weight` [out, in, k, k] and `<prefix>.bias` [out].
void init_conv(Parameters& params, const std::string& prefix, std::size_t in, std::size_t out,
               std::size_t kernel, Rng& rng, Init init = Init::Glorot);

Var conv_forward(Tape& t, const Parameters& params, const std::string& prefix, Var img);

/// Uniform Glorot fill of an existing tensor with the given fans.
void glorot_fill(Tensor& tensor, std::size_t fan_in, std::size_t fan_out, Rng& rng);

const Tensor& param_at(const Parameters& params, const std::string& name);

}  // namespace mufasa::nn
