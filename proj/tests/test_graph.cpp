#include "doctest.h"
#include "test_util.hpp"

#include "gct/errors.hpp"
#include "gct/graph/graph.hpp"
#include "gct/synthgen/synthgen.hpp"

#include <algorithm>
#include <cmath>

using namespace gct;
using namespace gct::graph;
using gct::testing::mat;

namespace {

Encounter codes(std::vector<int> dx, std::vector<int> treat, std::vector<int> lab = {}) {
  Encounter e;
  e.dx = std::move(dx);
  e.treat = std::move(treat);
  e.lab = std::move(lab);
  return e;
}

std::vector<Encounter> small_corpus(std::uint64_t seed, std::size_t n = 60) {
  synth::SyntheticConfig cfg;
  cfg.num_dx = cfg.num_treat = cfg.num_lab = 25;
  cfg.num_encounters = n;
  cfg.seed = seed;
  return synth::generate_dataset(cfg, std::nullopt);
}

}  // namespace

TEST_CASE("node indexing layout") {
  const auto idx = NodeIndexing::of(codes({5, 6}, {1}, {2, 3, 4}));
  CHECK(idx.size() == 7);
  CHECK(idx.index({NodeKind::Visit, 0}) == 0);
  CHECK(idx.index({NodeKind::Dx, 1}) == 2);
  CHECK(idx.index({NodeKind::Treatment, 0}) == 3);
  CHECK(idx.index({NodeKind::Lab, 2}) == 6);
  for (Eigen::Index i = 0; i < idx.size(); ++i) CHECK(idx.index(idx.node(i)) == i);
  CHECK_THROWS_AS(idx.index({NodeKind::Treatment, 1}), StructuralError);
  CHECK_THROWS_AS(idx.node(7), ArgumentError);
}

TEST_CASE("co-occurrence estimates") {
  // m1 appears in 2 of the 4 encounters containing d1.
  const std::vector<Encounter> corpus = {codes({1}, {1}), codes({1, 1}, {1, 2}), codes({1}, {2}),
                                         codes({1}, {}), codes({2}, {1})};
  const auto t = CondProbTables::estimate(corpus);
  CHECK(t.p_treat_given_dx(1, 1) == 0.5);
  CHECK(t.p_dx_given_treat(1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(t.p_treat_given_dx(1, 2) == 1.0);
  CHECK(t.p_treat_given_dx(1, 99) == 0.0);
  CHECK(t.p_dx_given_treat(99, 1) == 0.0);

  const auto single = CondProbTables::estimate(std::vector<Encounter>{codes({3}, {4}, {5})});
  CHECK(single.p_treat_given_dx(4, 3) == 1.0);
  CHECK(single.p_dx_given_treat(3, 4) == 1.0);
  CHECK(single.p_lab_given_treat(5, 4) == 1.0);
  CHECK(single.p_treat_given_lab(4, 5) == 1.0);
}

TEST_CASE("estimates are invariant to corpus order") {
  auto corpus = small_corpus(5);
  const auto a = CondProbTables::estimate(corpus);
  std::reverse(corpus.begin(), corpus.end());
  std::rotate(corpus.begin(), corpus.begin() + 17, corpus.end());
  CHECK(CondProbTables::estimate(corpus) == a);
}

TEST_CASE("mask rules") {
  CHECK((build_mask(codes({0}, {0})).array() == 0.0).all());
  const Matrix m = build_mask(codes({0, 1}, {0}, {0}));
  // layout: visit, d0, d1, m0, r0
  CHECK(is_masked(m(1, 2)));
  CHECK(is_masked(m(2, 1)));
  CHECK(m(1, 3) == 0.0);
  CHECK(m(3, 4) == 0.0);
  CHECK(is_masked(m(1, 4)));
  CHECK((m.row(0).array() == 0.0).all());
  CHECK((m.diagonal().array() == 0.0).all());
  for (const auto& e : small_corpus(2, 20)) {
    const Matrix mk = build_mask(e);
    CHECK(mk == mk.transpose());
  }
}

TEST_CASE("prior from conditional probabilities") {
  // p(m0|d0) = 0.2, p(m1|d0) = 0.6.
  const std::vector<Encounter> corpus = {codes({0}, {0, 1}), codes({0}, {1}), codes({0}, {1}),
                                         codes({0}, {}), codes({0}, {})};
  const auto t = CondProbTables::estimate(corpus);
  const Matrix p = build_prior(codes({0}, {0, 1}), t);
  const Matrix expected_dx_row = mat({{1, 1, 0.2, 0.6}}) / 2.8;
  CHECK((p.row(1) - expected_dx_row).cwiseAbs().maxCoeff() < 1e-15);
  // treatment rows: p(d0|m0) = 1, p(d0|m1) = 1; m0 <-> m1 masked.
  CHECK((p.row(2) - mat({{1, 1, 1, 0}}) / 3.0).cwiseAbs().maxCoeff() < 1e-15);

  const auto empty = CondProbTables::estimate(std::vector<Encounter>{});
  const Matrix u = build_prior(codes({0}, {0, 1}, {2}), empty);
  CHECK((u.row(1) - mat({{0.5, 0.5, 0, 0, 0}})).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((u.row(0).array() == 0.2).all());
  CHECK_THROWS_AS(build_prior(codes({0}, {0}), empty, 0.0), ArgumentError);
}

TEST_CASE("prior rows are distributions and vanish on masked cells") {
  const auto corpus = small_corpus(9);
  const auto t = CondProbTables::estimate(corpus);
  for (const auto& e : corpus) {
    const Matrix p = build_prior(e, t);
    const Matrix m = build_mask(e);
    require_row_stochastic(p, "prior");
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (is_masked(m.data()[i])) CHECK(p.data()[i] == 0.0);
  }
}

TEST_CASE("true adjacency") {
  Encounter two = codes({0}, {});
  two.edges = std::vector<Edge>{{{NodeKind::Visit, 0}, {NodeKind::Dx, 0}}};
  CHECK(build_true_adjacency(two) == mat({{0.5, 0.5}, {0.5, 0.5}}));

  Encounter isolated = codes({0}, {0});
  isolated.edges = std::vector<Edge>{{{NodeKind::Visit, 0}, {NodeKind::Dx, 0}}};
  CHECK(build_true_adjacency(isolated).row(2) == mat({{0, 0, 1}}));

  CHECK_THROWS_AS(build_true_adjacency(codes({0}, {0})), StructuralError);

  for (const auto& e : small_corpus(4, 20)) {
    const Matrix a = build_true_adjacency(e);
    require_row_stochastic(a, "adjacency");
    // Symmetric before normalization: the support is symmetric.
    CHECK(((a.array() > 0.0) == (a.transpose().array() > 0.0)).all());
    // Every true connection is allowed by the mask.
    const Matrix m = build_mask(e);
    for (Eigen::Index i = 0; i < a.size(); ++i)
      if (a.data()[i] > 0.0) CHECK_FALSE(is_masked(m.data()[i]));
  }
}

TEST_CASE("masking a diagnosis in the prior") {
  // p(m|d) = 0.5, p(d|m) = 0.25.
  const std::vector<Encounter> corpus = {codes({0}, {0}), codes({0}, {}), codes({}, {0}),
                                         codes({}, {0}), codes({}, {0})};
  const auto t = CondProbTables::estimate(corpus);
  const Encounter e = codes({0}, {0});
  const Matrix p = build_prior(e, t);
  CHECK((p.row(2) - mat({{1, 0.25, 1}}) / 2.25).cwiseAbs().maxCoeff() < 1e-15);
  const auto idx = NodeIndexing::of(e);
  const Matrix q = mask_diagnosis_in_prior(p, idx, 1);
  CHECK((q - mat({{0.5, 0, 0.5}, {0, 1, 0}, {0.5, 0, 0.5}})).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(mask_diagnosis_in_prior(p, idx, 0), ArgumentError);
  CHECK_THROWS_AS(mask_diagnosis_in_prior(p, idx, 2), ArgumentError);

  const auto corpus2 = small_corpus(6, 10);
  const auto t2 = CondProbTables::estimate(corpus2);
  for (const auto& enc : corpus2) {
    const auto ix = NodeIndexing::of(enc);
    const Matrix masked = mask_diagnosis_in_prior(build_prior(enc, t2), ix, ix.dx_begin());
    require_row_stochastic(masked, "masked prior");
    CHECK(masked.col(ix.dx_begin()).sum() == 1.0);
  }
}

TEST_CASE("random adjacency") {
  Rng a(3), b(3);
  const Matrix r = random_adjacency(6, a);
  CHECK(r == random_adjacency(6, b));
  require_row_stochastic(r, "random");
  CHECK((r.array() > 0.0).all());
}

TEST_CASE("row-stochastic contract") {
  CHECK_THROWS_AS(require_row_stochastic(mat({{0.5, 0.6}, {0.5, 0.5}}), "x"), ContractError);
  CHECK_THROWS_AS(require_row_stochastic(mat({{1.5, -0.5}, {0.5, 0.5}}), "x"), ContractError);
  CHECK_NOTHROW(require_row_stochastic(mat({{1, 0}, {0.5, 0.5}}), "x"));
}
