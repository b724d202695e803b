#pragma once

#include <cstdint>

#include "mufasa/nn/tensor.hpp"

namespace mufasa::nn {

struct AdamConfig {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// AdamW-style decay applied to the weights directly; false folds it into the gradient.
  bool decoupled = true;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  Parameters m;
  Parameters v;
};

/// One Adam update of every parameter that has an entry in `grads`. Throws if a gradient is
/// non-finite or misshapen, naming the parameter; nothing is modified in that case.
void adam_step(AdamState& state, Parameters& params, const Parameters& grads);

}  // namespace mufasa::nn
