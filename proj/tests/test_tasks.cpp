#include "doctest.h"

#include "oracles.hpp"
#include "test_util.hpp"

#include "gct/errors.hpp"
#include "gct/tasks/metrics.hpp"

#include <cmath>

using namespace gct;
using namespace gct::testing;
using tasks::TaskKind;

TEST_CASE("ranking metrics on hand examples") {
  const std::vector<int> y{1, 0};
  CHECK(tasks::aucpr(y, std::vector<double>{0.9, 0.1}) == 1.0);
  CHECK(tasks::auroc(y, std::vector<double>{0.9, 0.1}) == 1.0);
  const std::vector<int> flipped{0, 1};
  CHECK(tasks::aucpr(flipped, std::vector<double>{0.9, 0.1}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(tasks::auroc(flipped, std::vector<double>{0.9, 0.1}) == 0.0);
  CHECK(tasks::auroc(y, std::vector<double>{0.1, 0.9}) == 0.0);
  CHECK(tasks::auroc(std::vector<int>{1, 0, 1, 0}, std::vector<double>{0.5, 0.5, 0.5, 0.5}) == 0.5);
  // All tied: precision at the single threshold is the prevalence.
  CHECK(tasks::aucpr(std::vector<int>{1, 0, 0, 0}, std::vector<double>{1, 1, 1, 1}) == 0.25);
}

TEST_CASE("ranking metrics reject single-class and malformed input") {
  CHECK_THROWS_AS(tasks::aucpr(std::vector<int>{1, 1}, std::vector<double>{0.1, 0.2}),
                  MetricUndefinedError);
  CHECK_THROWS_AS(tasks::auroc(std::vector<int>{0, 0}, std::vector<double>{0.1, 0.2}),
                  MetricUndefinedError);
  CHECK_THROWS_AS(tasks::auroc(std::vector<int>{2, 0}, std::vector<double>{0.1, 0.2}), DomainError);
  CHECK_THROWS_AS(tasks::aucpr(std::vector<int>{1, 0}, std::vector<double>{NAN, 0.2}), DomainError);
  CHECK_THROWS_AS(tasks::aucpr(std::vector<int>{1, 0}, std::vector<double>{0.2}), DimensionError);
}

TEST_CASE("ranking metrics match brute-force references on 100 random instances") {
  for (std::uint64_t inst = 0; inst < 100; ++inst) {
    Rng rng = Rng::derive(3, "metric-instance", inst);
    const std::size_t n = 2 + rng.below(60);
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform() < 0.3;
      // Coarse scores so ties are common.
      s[i] = inst % 2 ? std::floor(rng.uniform() * 8.0) / 8.0 : rng.uniform();
    }
    y[0] = 1;
    y[1] = 0;
    CHECK(std::abs(tasks::aucpr(y, s) - brute_force_aucpr(y, s)) < 1e-12);
    CHECK(std::abs(tasks::auroc(y, s) - brute_force_auroc(y, s)) < 1e-12);
  }
}

TEST_CASE("random scores give AUCPR near the prevalence") {
  Rng rng = Rng::derive(4, "random-scores");
  std::vector<int> y(1000);
  std::vector<double> s(1000);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = i % 10 == 0;
    s[i] = rng.uniform();
  }
  const double ap = tasks::aucpr(y, s);
  CHECK(ap >= 0.07);
  CHECK(ap <= 0.14);
}

TEST_CASE("structure_eval hand values on 3x3 cases") {
  // Star truth v-a, v-b with self-loops: row-normalized (A + I).
  const Matrix truth = mat({{1.0 / 3, 1.0 / 3, 1.0 / 3}, {0.5, 0.5, 0.0}, {0.5, 0.0, 0.5}});
  const Matrix uniform = Matrix::Constant(3, 3, 1.0 / 3);
  const std::vector<Matrix> maps{uniform};
  const auto s = tasks::structure_eval(maps, truth);
  // Row 0 contributes 0; rows 1 and 2 each 2 * 0.5 ln(0.5 / (1/3)) = ln 1.5.
  CHECK(s.kl_to_truth == doctest::Approx(2.0 * std::log(1.5)).epsilon(1e-14));
  CHECK(s.mean_entropy == doctest::Approx(std::log(3.0)).epsilon(1e-14));

  const std::vector<Matrix> exact{truth, truth};
  const auto z = tasks::structure_eval(exact, truth);
  CHECK(z.kl_to_truth == 0.0);
  // Entropies: ln 3, ln 2, ln 2.
  CHECK(z.mean_entropy == doctest::Approx((std::log(3.0) + 2.0 * std::log(2.0)) / 3.0).epsilon(1e-14));

  const std::vector<Matrix> mixed{truth, uniform};
  CHECK(tasks::structure_eval(mixed, truth).kl_to_truth ==
        doctest::Approx(std::log(1.5)).epsilon(1e-14));
  CHECK_THROWS_AS(tasks::structure_eval(std::vector<Matrix>{}, truth), TaskError);
}

TEST_CASE("summarize reports the mean and sample standard deviation") {
  const std::vector<double> one{0.7};
  CHECK(tasks::summarize(one).mean == 0.7);
  CHECK(tasks::summarize(one).std == 0.0);
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  CHECK(tasks::summarize(v).mean == 2.5);
  CHECK(tasks::summarize(v).std == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-15));
}

TEST_CASE("task names round-trip and Deep is excluded from graph reconstruction") {
  for (TaskKind t : {TaskKind::GraphReconstruction, TaskKind::DxTreatment, TaskKind::MaskedDx,
                     TaskKind::Readmission, TaskKind::Mortality})
    CHECK(tasks::task_kind_from_string(tasks::to_string(t)) == t);
  CHECK_THROWS_AS(tasks::task_kind_from_string("link"), ArgumentError);
  CHECK_THROWS_AS(tasks::check_compatible(models::ModelKind::Deep, TaskKind::GraphReconstruction),
                  TaskError);
  CHECK_NOTHROW(tasks::check_compatible(models::ModelKind::Deep, TaskKind::MaskedDx));
}

TEST_CASE("graph reconstruction: orthogonal embeddings give BCE ln 2 off the diagonal") {
  Encounter e;
  e.id = 0;
  e.dx = {0};
  e.treat = {0};
  e.edges = std::vector<Edge>{{{NodeKind::Visit, 0}, {NodeKind::Dx, 0}},
                              {{NodeKind::Dx, 0}, {NodeKind::Treatment, 0}}};
  const Matrix target = tasks::reconstruction_target(e);
  CHECK(target == mat({{1, 1, 0}, {1, 1, 1}, {0, 1, 1}}));

  // Zero embeddings: every logit is 0, so every pair costs ln 2.
  Tape tape;
  models::ModelOutput out;
  out.nodes = tape.leaf(Matrix::Zero(3, 4));
  out.visit = select_row(out.nodes, 0);
  auto r = tasks::task_loss(TaskKind::GraphReconstruction, models::ModelKind::GCN, {}, out, e, {});
  CHECK(r.loss.scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  REQUIRE(r.scores.size() == 9);
  for (double s : r.scores) CHECK(s == 0.5);

  // Orthogonal unit rows: off-diagonal scores are exactly 0.5 and symmetric.
  Tape t2;
  out.nodes = t2.leaf(Matrix::Identity(3, 4));
  out.visit = select_row(out.nodes, 0);
  r = tasks::task_loss(TaskKind::GraphReconstruction, models::ModelKind::GCN, {}, out, e, {});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      CHECK(r.scores[static_cast<std::size_t>(3 * i + j)] == r.scores[static_cast<std::size_t>(3 * j + i)]);
      if (i != j) CHECK(r.scores[static_cast<std::size_t>(3 * i + j)] == 0.5);
    }

  Encounter bare = e;
  bare.edges.reset();
  CHECK_THROWS_AS(
      tasks::task_loss(TaskKind::GraphReconstruction, models::ModelKind::GCN, {}, out, bare, {}),
      TaskError);
}

TEST_CASE("zero head weights score 0.5 on both dx-treatment labels") {
  auto corpus = tiny_corpus(30, 1);
  corpus[0].labels.dx_treatment = std::vector<int>{2};
  models::ModelSpec s;
  s.kind = models::ModelKind::Shallow;
  s.dim = 4;
  s.shallow_layers = 1;
  models::Model model(s, Vocab{4, 4, 4}, 1);
  const auto head = tasks::make_head(model, TaskKind::DxTreatment, 1);
  REQUIRE(head.weight->value.cols() == 2);
  head.weight->value.setZero();
  Tape tape;
  Rng rng(0);
  const auto out = model.forward(tape, models::make_input(s.kind, corpus[0], nullptr, 0), rng);
  const auto r = tasks::task_loss(TaskKind::DxTreatment, s.kind, head, out, corpus[0], {});
  CHECK(r.scores == std::vector<double>{0.5, 0.5});
  CHECK(r.labels == std::vector<int>{0, 1});
  CHECK(r.loss.scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  corpus[0].labels.dx_treatment = std::vector<int>{3};
  CHECK_THROWS_AS(tasks::task_loss(TaskKind::DxTreatment, s.kind, head, out, corpus[0], {}),
                  TaskError);
}

TEST_CASE("binary heads read the visit embedding and the stored label") {
  auto corpus = tiny_corpus(31, 1);
  corpus[0].labels.mortality = true;
  models::ModelSpec s;
  s.kind = models::ModelKind::GCN;
  s.dim = 4;
  models::Model model(s, Vocab{4, 4, 4}, 1);
  const auto head = tasks::make_head(model, TaskKind::Mortality, 1);
  REQUIRE(head.weight->value.cols() == 1);
  Tape tape;
  Rng rng(0);
  const auto out = model.forward(tape, models::make_input(s.kind, corpus[0], nullptr, 0), rng);
  const auto r = tasks::task_loss(TaskKind::Mortality, s.kind, head, out, corpus[0], {});
  CHECK(r.labels == std::vector<int>{1});
  const double z = (out.visit.value() * head.weight->value)(0, 0);
  CHECK(r.scores[0] == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-15));
  CHECK(r.loss.scalar() == doctest::Approx(std::log1p(std::exp(-z))).epsilon(1e-13));

  corpus[0].labels.readmission.reset();
  CHECK_FALSE(tasks::encounter_supports(TaskKind::Readmission, corpus[0]));
  CHECK_THROWS_AS(tasks::task_loss(TaskKind::Readmission, s.kind, head, out, corpus[0], {}),
                  TaskError);
}

TEST_CASE("masked diagnosis: deterministic choice, mask token, and single-class accuracy") {
  auto corpus = tiny_corpus(32, 1, 1);
  Encounter& e = corpus[0];
  Rng a(9), b(9);
  const auto ma = tasks::choose_masked_dx(e, a);
  const auto mb = tasks::choose_masked_dx(e, b);
  CHECK(ma.node == mb.node);
  CHECK(ma.node >= 1);
  CHECK(ma.node <= static_cast<Eigen::Index>(e.dx.size()));
  CHECK(ma.code == e.dx[static_cast<std::size_t>(ma.node - 1)]);

  // |D| = 1: the arg-max is always right.
  models::ModelSpec s;
  s.kind = models::ModelKind::GCT;
  s.dim = 4;
  const auto tables = graph::CondProbTables::estimate(corpus);
  models::Model model(s, Vocab{1, 1, 1}, 2);
  const auto head = tasks::make_head(model, TaskKind::MaskedDx, 2);
  const auto in = models::make_input(s.kind, e, &tables, 0, ma.node);
  // The masked row of the prior is one-hot on itself.
  CHECK(in.propagation(ma.node, ma.node) == 1.0);
  Tape tape;
  Rng rng(0);
  const auto out = model.forward(tape, in, rng);
  const auto r = tasks::task_loss(TaskKind::MaskedDx, s.kind, head, out, e, ma);
  REQUIRE(r.correct);
  CHECK(*r.correct);
  CHECK(r.loss.scalar() == doctest::Approx(0.0));

  Encounter none = e;
  none.dx.clear();
  CHECK_THROWS_AS(tasks::choose_masked_dx(none, a), TaskError);
  CHECK_THROWS_AS(tasks::task_loss(TaskKind::MaskedDx, s.kind, head, out, e, {}), TaskError);
}

TEST_CASE("masked diagnosis: the masked node's embedding is the mask token") {
  auto corpus = tiny_corpus(33, 1);
  models::ModelSpec s;
  s.kind = models::ModelKind::Shallow;
  s.dim = 4;
  s.shallow_layers = 0;
  models::Model model(s, Vocab{4, 4, 4}, 2);
  auto in = models::make_input(s.kind, corpus[0], nullptr, 0, Eigen::Index{1});
  Tape tape;
  Rng rng(0);
  const auto out = model.forward(tape, in, rng);
  CHECK(out.nodes.value().row(1) == model.params().at("embed.mask").value.row(0));
}

TEST_CASE("uniform random predictor over 1000 classes is right about 0.1% of the time") {
  Rng rng = Rng::derive(5, "uniform-predictor");
  int hits = 0;
  const int trials = 200000;
  for (int i = 0; i < trials; ++i) hits += rng.below(1000) == rng.below(1000);
  const double acc = static_cast<double>(hits) / trials;
  CHECK(acc > 0.0007);
  CHECK(acc < 0.0013);
}
