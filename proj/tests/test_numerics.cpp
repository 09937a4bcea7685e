#include "doctest.h"
#include "fd_oracle.hpp"
#include "test_util.hpp"

#include "gct/errors.hpp"
#include "gct/numerics/adam.hpp"
#include "gct/numerics/ops.hpp"

#include <cmath>
#include <limits>

using namespace gct;
using namespace gct::testing;

constexpr double M = kMaskedValue;

TEST_CASE("matmul identity and selector") {
  Tape t;
  auto id = t.constant(Matrix::Identity(2, 2));
  auto b = t.constant(mat({{1, 2}, {3, 4}}));
  CHECK(matmul(id, b).value() == mat({{1, 2}, {3, 4}}));
  auto sel = t.constant(mat({{1, 0}}));
  auto col = t.constant(mat({{5}, {7}}));
  CHECK(matmul(sel, col).value() == mat({{5}}));
}

TEST_CASE("matmul shape mismatch is a dimension error") {
  Tape t;
  auto a = t.constant(Matrix::Zero(2, 3));
  auto b = t.constant(Matrix::Zero(2, 3));
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("matmul gradient matches central differences") {
  Rng rng(7);
  Matrix a = random_matrix(3, 4, rng);
  Matrix b = random_matrix(4, 2, rng);
  Matrix w = random_matrix(3, 2, rng);
  auto f = [&]() { return (a * b).cwiseProduct(w).sum(); };
  Tape t;
  auto la = t.leaf(a);
  auto lb = t.leaf(b);
  t.backward(weighted_sum(matmul(la, lb), w));
  CHECK(relative_error(la.grad(), numeric_grad(f, a)) < 1e-6);
  CHECK(relative_error(lb.grad(), numeric_grad(f, b)) < 1e-6);
}

TEST_CASE("masked_row_softmax closed forms") {
  SUBCASE("symmetric around a masked middle") {
    Matrix p = masked_row_softmax(mat({{0, 0, 0}}), mat({{0, M, 0}}));
    CHECK(p(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p(0, 1) == 0.0);
    CHECK(p(0, 2) == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("uniform") {
    Matrix p = masked_row_softmax(mat({{1, 1}}), mat({{0, 0}}));
    CHECK(p(0, 0) == doctest::Approx(0.5));
    CHECK(p(0, 1) == doctest::Approx(0.5));
  }
  SUBCASE("ln 2 vs 0") {
    Matrix p = masked_row_softmax(mat({{std::log(2.0), 0}}), mat({{0, 0}}));
    CHECK(std::abs(p(0, 0) - 2.0 / 3.0) < 1e-15);
    CHECK(std::abs(p(0, 1) - 1.0 / 3.0) < 1e-15);
  }
  SUBCASE("real -inf in the mask is accepted") {
    const double inf = std::numeric_limits<double>::infinity();
    Matrix p = masked_row_softmax(mat({{3, 4}}), mat({{-inf, 0}}));
    CHECK(p(0, 0) == 0.0);
    CHECK(p(0, 1) == 1.0);
  }
}

TEST_CASE("masked_row_softmax rejects a fully masked row") {
  CHECK_THROWS_AS(masked_row_softmax(mat({{1, 2}, {3, 4}}), mat({{0, 0}, {M, M}})),
                  DegenerateRowError);
}

TEST_CASE("masked_row_softmax property: rows are distributions, masked cells exactly 0") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.below(8));
    Matrix logits = random_matrix(n, n, rng) * 30.0;
    Matrix mask = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j && rng.uniform() < 0.5) mask(i, j) = M;
    Matrix p = masked_row_softmax(logits, mask);
    for (Eigen::Index i = 0; i < n; ++i) {
      CHECK(std::abs(p.row(i).sum() - 1.0) <= 1e-12);
      for (Eigen::Index j = 0; j < n; ++j) {
        if (is_masked(mask(i, j))) CHECK(p(i, j) == 0.0);
        CHECK(std::isfinite(p(i, j)));
      }
    }
  }
}

TEST_CASE("masked_row_softmax gradient") {
  Rng rng(3);
  Matrix logits = random_matrix(4, 4, rng);
  Matrix mask = mat({{0, M, 0, 0}, {0, 0, M, M}, {M, 0, 0, 0}, {0, 0, 0, M}});
  Matrix w = random_matrix(4, 4, rng);
  auto f = [&]() { return masked_row_softmax(logits, mask).cwiseProduct(w).sum(); };
  Tape t;
  auto x = t.leaf(logits);
  t.backward(weighted_sum(masked_row_softmax(x, mask), w));
  CHECK(relative_error(x.grad(), numeric_grad(f, logits)) < 1e-6);
}

TEST_CASE("kl_divergence_rows closed forms") {
  CHECK(kl_divergence_rows(mat({{1, 0}}), mat({{0.5, 0.5}})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const double expected = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  CHECK(kl_divergence_rows(mat({{0.5, 0.5}}), mat({{0.9, 0.1}})) ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.510826).epsilon(1e-6));
  CHECK_THROWS_AS(kl_divergence_rows(mat({{1.5, -0.5}}), mat({{0.5, 0.5}})), DomainError);
  CHECK_THROWS_AS(kl_divergence_rows(mat({{0.5, 0.5}}), mat({{1.5, -0.5}})), DomainError);
}

TEST_CASE("kl_divergence_rows floors q where p has mass") {
  // q = 0 under p > 0 is treated as 1e-12 instead of producing inf.
  const double kl = kl_divergence_rows(mat({{0.5, 0.5}}), mat({{1.0, 0.0}}));
  CHECK(kl == doctest::Approx(0.5 * std::log(0.5) + 0.5 * std::log(0.5 / 1e-12)));
}

TEST_CASE("kl_divergence_rows property: zero on identical rows, never negative") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.below(7));
    Matrix p = random_stochastic(n, rng);
    Matrix q = random_stochastic(n, rng);
    CHECK(kl_divergence_rows(p, p) == 0.0);
    CHECK(kl_divergence_rows(p, q) >= 0.0);
  }
}

TEST_CASE("kl_divergence_rows gradient w.r.t. both arguments") {
  Rng rng(9);
  Matrix logits_p = random_matrix(3, 3, rng);
  Matrix logits_q = random_matrix(3, 3, rng);
  Matrix mask = mat({{0, 0, M}, {0, 0, 0}, {M, 0, 0}});
  auto f = [&]() {
    return kl_divergence_rows(masked_row_softmax(logits_p, mask),
                              masked_row_softmax(logits_q, mask));
  };
  Tape t;
  auto lp = t.leaf(logits_p);
  auto lq = t.leaf(logits_q);
  t.backward(kl_divergence_rows(masked_row_softmax(lp, mask), masked_row_softmax(lq, mask)));
  CHECK(relative_error(lp.grad(), numeric_grad(f, logits_p)) < 1e-6);
  CHECK(relative_error(lq.grad(), numeric_grad(f, logits_q)) < 1e-6);
}

TEST_CASE("row_entropy closed forms") {
  CHECK(row_entropy(Matrix::Identity(3, 3)) == 0.0);
  CHECK(row_entropy(Matrix::Constant(4, 4, 0.25)) == doctest::Approx(std::log(4.0)));
  CHECK(row_entropy(mat({{0.5, 0.5}})) == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(row_entropy(mat({{1.5, -0.5}})), DomainError);
}

TEST_CASE("mlp_block identity with zero weights and residual") {
  ParameterStore store;
  Rng init(1);
  std::vector<DenseLayer> layers{make_dense_layer(store, "l0", 4, 4, init),
                                 make_dense_layer(store, "l1", 4, 4, init)};
  for (auto& l : layers) l.weight->value.setZero();
  Rng rng(2);
  Matrix x = random_matrix(3, 4, rng);
  Tape t;
  auto y = mlp_block(t.constant(x), layers, 0.5, false, rng);
  CHECK((y.value() - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mlp_block with dropout 0 is identical in train and eval") {
  ParameterStore store;
  Rng init(1);
  std::vector<DenseLayer> layers{make_dense_layer(store, "l0", 4, 6, init),
                                 make_dense_layer(store, "l1", 6, 6, init)};
  Rng data(4);
  Matrix x = random_matrix(5, 4, data);
  Rng r1(9), r2(9);
  Tape t;
  auto a = mlp_block(t.constant(x), layers, 0.0, true, r1);
  auto b = mlp_block(t.constant(x), layers, 0.0, false, r2);
  CHECK(a.value() == b.value());
}

TEST_CASE("mlp_block rejects mismatched widths and bad dropout") {
  ParameterStore store;
  Rng init(1);
  std::vector<DenseLayer> layers{make_dense_layer(store, "l0", 4, 4, init)};
  Tape t;
  Rng rng(0);
  CHECK_THROWS_AS(mlp_block(t.constant(Matrix::Zero(2, 3)), layers, 0.0, false, rng),
                  DimensionError);
  CHECK_THROWS_AS(mlp_block(t.constant(Matrix::Zero(2, 4)), layers, 1.0, false, rng),
                  DomainError);
}

TEST_CASE("mlp_block gradient check, 2 layers width 8, train mode with dropout") {
  ParameterStore store;
  Rng init(21);
  std::vector<DenseLayer> layers{make_dense_layer(store, "l0", 8, 8, init),
                                 make_dense_layer(store, "l1", 8, 8, init)};
  for (std::size_t i = 0; i < store.size(); ++i)
    store[i].value += random_matrix(store[i].value.rows(), store[i].value.cols(), init) * 0.1;
  Rng data(22);
  Matrix x = random_matrix(4, 8, data);
  Matrix w = random_matrix(4, 8, data);
  auto forward = [&](Tape& t, Tensor in) {
    Rng drop(99);
    (void)t;
    return weighted_sum(mlp_block(in, layers, 0.2, true, drop), w);
  };
  auto f = [&]() {
    Tape t;
    return forward(t, t.constant(x)).scalar();
  };
  store.zero_grad();
  Tape t;
  auto in = t.leaf(x);
  t.backward(forward(t, in));
  CHECK(relative_error(in.grad(), numeric_grad(f, x)) < 1e-4);
  for (std::size_t i = 0; i < store.size(); ++i) {
    Matrix analytic = store[i].grad;
    Matrix numeric = numeric_grad(f, store[i].value);
    INFO(store[i].name);
    CHECK(relative_error(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("backward is deterministic") {
  ParameterStore store;
  Rng init(3);
  std::vector<DenseLayer> layers{make_dense_layer(store, "l0", 5, 5, init)};
  Rng data(4);
  Matrix x = random_matrix(6, 5, data);
  auto run = [&]() {
    store.zero_grad();
    Tape t;
    Rng drop(5);
    auto y = mlp_block(t.constant(x), layers, 0.3, true, drop);
    t.backward(sum_all(relu(matmul_nt(y, y))));
    std::vector<Matrix> grads;
    for (std::size_t i = 0; i < store.size(); ++i) grads.push_back(store[i].grad);
    return grads;
  };
  auto g1 = run();
  auto g2 = run();
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("sigmoid_bce and softmax_cross_entropy gradients") {
  Rng rng(13);
  Matrix z = random_matrix(3, 3, rng);
  Matrix y = mat({{1, 0, 1}, {0, 0, 1}, {1, 1, 0}});
  auto fb = [&]() {
    Tape t;
    return sigmoid_bce(t.constant(z), y).scalar();
  };
  Tape t;
  auto lz = t.leaf(z);
  t.backward(sigmoid_bce(lz, y));
  CHECK(relative_error(lz.grad(), numeric_grad(fb, z)) < 1e-6);

  Matrix logits = random_matrix(1, 5, rng);
  auto fc = [&]() {
    Tape tc;
    return softmax_cross_entropy(tc.constant(logits), 2).scalar();
  };
  Tape t2;
  auto ll = t2.leaf(logits);
  t2.backward(softmax_cross_entropy(ll, 2));
  CHECK(relative_error(ll.grad(), numeric_grad(fc, logits)) < 1e-6);
  CHECK(sigmoid_bce(t2.constant(Matrix::Zero(1, 1)), mat({{1}})).scalar() ==
        doctest::Approx(std::log(2.0)));
}

TEST_CASE("embedding_lookup scatters gradient only into used rows") {
  ParameterStore store;
  auto& a = store.add("a", Matrix::Constant(4, 2, 1.0));
  auto& b = store.add("b", Matrix::Constant(1, 2, 2.0));
  std::vector<Parameter*> tables{&a, &b};
  std::vector<RowRef> rows{{0, 2}, {1, 0}, {0, 2}};
  Tape t;
  auto e = embedding_lookup(t, tables, rows);
  CHECK(e.value().row(1) == b.value.row(0));
  t.backward(sum_all(e));
  CHECK(a.grad(2, 0) == 2.0);
  CHECK(a.grad(0, 0) == 0.0);
  CHECK(a.grad(1, 1) == 0.0);
  CHECK(b.grad(0, 1) == 1.0);
}

TEST_CASE("adam: zero gradient leaves the parameter unchanged") {
  ParameterStore store;
  auto& p = store.add("p", Matrix::Constant(2, 2, 0.7));
  AdamState s = make_adam_state(store, {.lr = 0.1});
  adam_step(store, s);
  CHECK(p.value == Matrix::Constant(2, 2, 0.7));
}

TEST_CASE("adam: first step closed form and monotone descent") {
  ParameterStore store;
  auto& p = store.add("p", Matrix::Zero(1, 1));
  AdamState s = make_adam_state(store, {.lr = 0.1});
  p.grad(0, 0) = 1.0;
  adam_step(store, s);
  CHECK(p.value(0, 0) == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));
  const double after_one = p.value(0, 0);
  adam_step(store, s);
  CHECK(p.value(0, 0) < after_one);
  CHECK(s.t == 2);
}

TEST_CASE("adam: non-finite gradient names the parameter") {
  ParameterStore store;
  store.add("fine", Matrix::Zero(1, 1));
  auto& bad = store.add("encoder.w", Matrix::Zero(1, 2));
  bad.grad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  AdamState s = make_adam_state(store, {});
  try {
    adam_step(store, s);
    FAIL("expected OptimizerError");
  } catch (const OptimizerError& e) {
    CHECK(std::string(e.what()).find("encoder.w") != std::string::npos);
  }
  CHECK(s.t == 0);
}
