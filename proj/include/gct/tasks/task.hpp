#pragma once

// Prediction heads and per-encounter losses for the five tasks.

#include "gct/encounter.hpp"
#include "gct/models/model.hpp"
#include "gct/numerics/ops.hpp"

#include <optional>
#include <string>
#include <vector>

namespace gct::tasks {

enum class TaskKind { GraphReconstruction, DxTreatment, MaskedDx, Readmission, Mortality };

/// "graph-recon", "dx-treatment", "masked-dx", "readmission", "mortality".
std::string to_string(TaskKind k);
/// Throws ArgumentError on an unknown name.
TaskKind task_kind_from_string(const std::string& s);

/// Throws TaskError for pairs the protocol excludes (Deep cannot reconstruct graphs:
/// it has no per-node output after its post stack).
void check_compatible(models::ModelKind model, TaskKind task);

/// Throws TaskError if the encounter lacks what the task needs.
void check_encounter(TaskKind task, const Encounter& e);

/// Whether the encounter carries what the task needs (used to skip records).
bool encounter_supports(TaskKind task, const Encounter& e);

/// Linear output layer; absent for graph reconstruction.
struct TaskHead {
  Parameter* weight = nullptr;  // dim x outputs
  Parameter* bias = nullptr;    // 1 x outputs
};

/// Adds "head.w"/"head.b" (dim x 2, dim x |D| or dim x 1) to the model's store.
TaskHead make_head(models::Model& model, TaskKind task, std::uint64_t seed);
/// Looks up an existing head (after loading a checkpoint).
TaskHead find_head(models::Model& model, TaskKind task);

/// Masked-diagnosis choice: node index in the encounter layout and its code.
struct MaskedDx {
  Eigen::Index node = 0;
  int code = 0;
};
/// Uniform over the encounter's diagnosis nodes. Throws TaskError without any.
MaskedDx choose_masked_dx(const Encounter& e, Rng& rng);

/// 0/1 pattern of A + I (symmetric, self-loops included).
Matrix reconstruction_target(const Encounter& e);

/// Loss plus the raw material for metrics.
struct TaskResult {
  Tensor loss;  // 1 x 1 prediction loss
  /// Binary scores/labels, laid out per output column: for dx-treatment entry k
  /// belongs to label k+1; for graph reconstruction all N^2 pairs.
  std::vector<double> scores;
  std::vector<int> labels;
  /// Masked dx: whether the arg-max class equals the hidden code.
  std::optional<bool> correct;
};

/// `masked` is required for MaskedDx and ignored otherwise. Masked-dx reads the
/// masked node's final row, or v for the feed-forward baselines.
TaskResult task_loss(TaskKind task, models::ModelKind model, const TaskHead& head,
                     const models::ModelOutput& out, const Encounter& e, const std::optional<MaskedDx>& masked);

}  // namespace gct::tasks
