#include "gct/numerics/adam.hpp"

#include "gct/errors.hpp"

#include <cmath>

namespace gct {

AdamState make_adam_state(const ParameterStore& store, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Matrix& v = store[i].value;
    s.m.push_back(Matrix::Zero(v.rows(), v.cols()));
    s.v.push_back(Matrix::Zero(v.rows(), v.cols()));
  }
  return s;
}

void adam_step(ParameterStore& store, AdamState& state) {
  if (state.m.size() != store.size() || state.v.size() != store.size())
    throw OptimizerError("Adam state does not match parameter store");
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Parameter& p = store[i];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols() ||
        state.m[i].rows() != p.value.rows() || state.m[i].cols() != p.value.cols())
      throw OptimizerError("shape mismatch for parameter " + p.name);
    if (!p.grad.allFinite()) throw OptimizerError("non-finite gradient in parameter " + p.name);
  }
  const AdamConfig& c = state.config;
  ++state.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    m = c.beta1 * m + (1.0 - c.beta1) * p.grad;
    v = c.beta2 * v + (1.0 - c.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  }
}

}  // namespace gct
