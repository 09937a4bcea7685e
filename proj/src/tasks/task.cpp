#include "gct/tasks/task.hpp"

#include "gct/errors.hpp"
#include "gct/graph/graph.hpp"

#include <cmath>

namespace gct::tasks {

namespace {

struct KindName {
  TaskKind kind;
  const char* name;
};
constexpr KindName kKindNames[] = {
    {TaskKind::GraphReconstruction, "graph-recon"}, {TaskKind::DxTreatment, "dx-treatment"},
    {TaskKind::MaskedDx, "masked-dx"},              {TaskKind::Readmission, "readmission"},
    {TaskKind::Mortality, "mortality"},
};

Eigen::Index head_outputs(TaskKind task, const Vocab& vocab) {
  switch (task) {
    case TaskKind::GraphReconstruction: return 0;
    case TaskKind::DxTreatment: return 2;
    case TaskKind::MaskedDx: return vocab.num_dx;
    case TaskKind::Readmission:
    case TaskKind::Mortality: return 1;
  }
  return 0;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor linear(const TaskHead& head, Tensor x) {
  Tape& t = *x.tape();
  return add_row(matmul(x, t.param(*head.weight)), t.param(*head.bias));
}

}  // namespace

std::string to_string(TaskKind k) {
  for (const auto& kn : kKindNames)
    if (kn.kind == k) return kn.name;
  return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
  for (const auto& kn : kKindNames)
    if (s == kn.name) return kn.kind;
  throw ArgumentError("unknown task '" + s +
                      "' (expected graph-recon, dx-treatment, masked-dx, readmission, mortality)");
}

void check_compatible(models::ModelKind model, TaskKind task) {
  if (model == models::ModelKind::Deep && task == TaskKind::GraphReconstruction)
    throw TaskError("the deep baseline is not defined for graph reconstruction");
}

bool encounter_supports(TaskKind task, const Encounter& e) {
  switch (task) {
    case TaskKind::GraphReconstruction: return e.has_structure();
    case TaskKind::DxTreatment: return e.labels.dx_treatment.has_value();
    case TaskKind::MaskedDx: return !e.dx.empty();
    case TaskKind::Readmission: return e.labels.readmission.has_value();
    case TaskKind::Mortality: return e.labels.mortality.has_value();
  }
  return false;
}

void check_encounter(TaskKind task, const Encounter& e) {
  if (!encounter_supports(task, e))
    throw TaskError("encounter " + std::to_string(e.id) + " lacks what " + to_string(task) +
                    " needs");
}

TaskHead make_head(models::Model& model, TaskKind task, std::uint64_t seed) {
  const Eigen::Index outputs = head_outputs(task, model.vocab());
  if (outputs == 0) return {};
  Rng rng = Rng::derive(seed, "head");
  TaskHead h;
  h.weight = &model.params().add("head.w", glorot_uniform(model.spec().dim, outputs, rng));
  h.bias = &model.params().add("head.b", Matrix::Zero(1, outputs));
  return h;
}

TaskHead find_head(models::Model& model, TaskKind task) {
  const Eigen::Index outputs = head_outputs(task, model.vocab());
  if (outputs == 0) return {};
  TaskHead h{model.params().find("head.w"), model.params().find("head.b")};
  if (!h.weight || !h.bias || h.weight->value.cols() != outputs)
    throw ContractError("model has no " + to_string(task) + " head");
  return h;
}

MaskedDx choose_masked_dx(const Encounter& e, Rng& rng) {
  if (e.dx.empty()) throw TaskError("encounter " + std::to_string(e.id) + " has no diagnosis to mask");
  const auto k = rng.below(e.dx.size());
  return {static_cast<Eigen::Index>(1 + k), e.dx[k]};
}

Matrix reconstruction_target(const Encounter& e) {
  const Matrix a = graph::build_true_adjacency(e);
  return (a.array() > 0.0).cast<double>().matrix();
}

TaskResult task_loss(TaskKind task, models::ModelKind model, const TaskHead& head,
                     const models::ModelOutput& out, const Encounter& e, const std::optional<MaskedDx>& masked) {
  check_encounter(task, e);
  TaskResult r;
  switch (task) {
    case TaskKind::GraphReconstruction: {
      const Matrix target = reconstruction_target(e);
      Tensor logits = matmul_nt(out.nodes, out.nodes);
      r.loss = sigmoid_bce(logits, target);
      const Matrix& z = logits.value();
      for (Eigen::Index i = 0; i < z.size(); ++i) {
        r.scores.push_back(sigmoid(z.data()[i]));
        r.labels.push_back(target.data()[i] > 0.5);
      }
      break;
    }
    case TaskKind::DxTreatment: {
      Matrix target = Matrix::Zero(1, 2);
      for (int l : *e.labels.dx_treatment) {
        if (l != 1 && l != 2) throw TaskError("dx-treatment labels must be 1 or 2");
        target(0, l - 1) = 1.0;
      }
      Tensor logits = linear(head, out.visit);
      r.loss = sigmoid_bce(logits, target);
      for (int k = 0; k < 2; ++k) {
        r.scores.push_back(sigmoid(logits.value()(0, k)));
        r.labels.push_back(target(0, k) > 0.5);
      }
      break;
    }
    case TaskKind::MaskedDx: {
      if (!masked) throw TaskError("masked-dx needs a masked diagnosis");
      // Feed-forward baselines have no usable per-node output; v stands in.
      Tensor source = models::is_feedforward(model) ? out.visit : select_row(out.nodes, masked->node);
      Tensor logits = linear(head, source);
      r.loss = softmax_cross_entropy(logits, masked->code);
      Eigen::Index best = 0;
      logits.value().row(0).maxCoeff(&best);
      r.correct = best == masked->code;
      break;
    }
    case TaskKind::Readmission:
    case TaskKind::Mortality: {
      const bool label = task == TaskKind::Readmission ? *e.labels.readmission : *e.labels.mortality;
      Matrix target(1, 1);
      target(0, 0) = label ? 1.0 : 0.0;
      Tensor logits = linear(head, out.visit);
      r.loss = sigmoid_bce(logits, target);
      r.scores.push_back(sigmoid(logits.value()(0, 0)));
      r.labels.push_back(label);
      break;
    }
  }
  return r;
}

}  // namespace gct::tasks
