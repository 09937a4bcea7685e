#pragma once

#include "gct/numerics/ops.hpp"
#include "gct/rng.hpp"

#include <initializer_list>

namespace gct::testing {

inline Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()),
           static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, 1.0);
  return m;
}

inline Matrix random_stochastic(Eigen::Index n, Rng& rng) {
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() + 0.01;
  for (Eigen::Index i = 0; i < n; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

/// sum(y .* w) as a tape op, so tests can reduce any output to a scalar loss.
inline Tensor weighted_sum(Tensor y, const Matrix& w) {
  Tape& t = *y.tape();
  return sum_all(t.record(y.value().cwiseProduct(w), y.requires_grad(),
                          [id = y.id(), w](Tape& tp, const Matrix& g) {
                            tp.accumulate(id, g.cwiseProduct(w));
                          }));
}

}  // namespace gct::testing
