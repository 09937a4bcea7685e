#pragma once

#include "gct/numerics/tape.hpp"

#include <cstdint>
#include <vector>

namespace gct {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments for every parameter of one store, indexed like the store.
struct AdamState {
  AdamConfig config;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::int64_t t = 0;
};

AdamState make_adam_state(const ParameterStore& store, AdamConfig config);

/// Bias-corrected Adam update from each parameter's accumulated grad. Grads are
/// left untouched. Throws OptimizerError naming the first non-finite gradient; no
/// parameter is modified in that case.
void adam_step(ParameterStore& store, AdamState& state);

}  // namespace gct
