#pragma once

// Experiment orchestration: seeded 8:1:1 splits, minibatch training with
// validation-based model selection, multi-seed repetition, and the run artifacts
// (config JSON, RunRecord JSON, metrics CSV).

#include "gct/encounter.hpp"
#include "gct/graph/graph.hpp"
#include "gct/models/model.hpp"
#include "gct/tasks/metrics.hpp"
#include "gct/tasks/task.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace gct::harness {

inline constexpr int kRunFormatVersion = 1;

struct TrainConfig {
  int batch_size = 32;
  int max_iterations = 20000;
  int eval_interval = 500;
  double learning_rate = 1e-3;
  /// Master seed; every split, initialization and dropout stream derives from it.
  std::uint64_t seed = 0;
  int repeats = 5;
  double train_fraction = 0.8;
  double valid_fraction = 0.1;

  /// Throws ConfigError.
  void validate() const;
};

struct ExperimentConfig {
  models::ModelSpec model;
  tasks::TaskKind task = tasks::TaskKind::GraphReconstruction;
  TrainConfig train;

  /// Also checks model/task compatibility (TaskError).
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Missing keys keep their defaults. Throws ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

/// Per-model, per-task learning rate, dropout rates and regularization weight.
struct Preset {
  double learning_rate = 0.0;
  double dropout = 0.0;
  double post_dropout = 0.0;
  double lambda = 0.0;
};

/// "<dataset>/<task>/<model>", e.g. "synthetic/graph-recon/gct" or "eicu/mortality/gcn-p".
std::vector<std::string> preset_names();
/// Throws ConfigError on an unknown name.
Preset preset(const std::string& name);
void apply_preset(const Preset& p, ExperimentConfig& config);

struct Split {
  std::vector<Encounter> train, valid, test;
};

/// Seeded shuffle, then a contiguous floor(0.8 n) / floor(0.1 n) / rest cut.
/// Throws ConfigError for fewer than 10 encounters.
Split split_dataset(const std::vector<Encounter>& data, std::uint64_t seed,
                    double train_fraction = 0.8, double valid_fraction = 0.1);

/// Metric name -> value, ordered by name.
using Metrics = std::map<std::string, double>;

/// Metric used to pick the best checkpoint: accuracy for masked-dx, AUCPR otherwise.
std::string selection_metric(tasks::TaskKind task);

struct EvalOptions {
  /// Adds kl_to_truth / mean_entropy for models with attention or propagation maps.
  bool structure = false;
  /// Seed for the evaluation-time masked-dx choice.
  std::uint64_t mask_seed = 0;
  /// Seed of the per-encounter random adjacency (GCN_random).
  std::uint64_t random_seed = 0;
};

/// Loss, AUCPR/AUROC (pooled over every binary output; dx-treatment reports the
/// mean over its two labels) or accuracy for masked-dx. Encounters the task cannot
/// use are skipped. Throws TaskError if structure is requested without ground truth.
Metrics evaluate(const models::Model& model, const tasks::TaskHead& head, tasks::TaskKind task,
                 const std::vector<Encounter>& data, const graph::CondProbTables& tables,
                 const EvalOptions& options);

/// One encounter's training objective: prediction loss, plus lambda times the GCT
/// regularizer when lambda > 0.
struct EncounterLoss {
  Tensor total;
  tasks::TaskResult prediction;
};
EncounterLoss encounter_loss(const models::Model& model, const tasks::TaskHead& head,
                             tasks::TaskKind task, const Encounter& e,
                             const graph::CondProbTables& tables, std::uint64_t random_seed,
                             Tape& tape, Rng& rng, bool train);

struct EvalPoint {
  int iteration = 0;
  double train_loss = 0.0;  // mean per-encounter loss since the previous point
  Metrics valid;
};

struct RunRecord {
  ExperimentConfig config;
  int repeat = 0;
  std::uint64_t run_seed = 0;
  std::size_t train_size = 0, valid_size = 0, test_size = 0;
  std::vector<EvalPoint> history;
  int best_iteration = 0;
  Metrics best_valid;
  Metrics test;
  std::string checkpoint;  // file name relative to the run directory
};

nlohmann::json to_json(const RunRecord& r);

/// Seed of repeat r: distinct per repeat, fixed by the master seed.
std::uint64_t repeat_seed(std::uint64_t master, int repeat);

/// Optional progress sink (iteration, mean train loss, validation metrics).
using Progress = std::function<void(const EvalPoint&)>;

/// The split and tables a repeat uses: everything is re-derivable from the data,
/// the master seed and the repeat index.
struct RepeatSetup {
  std::uint64_t run_seed = 0;
  Split split;
  graph::CondProbTables tables;  // estimated on split.train only
  Vocab vocab;                   // covers every split
};
RepeatSetup prepare_repeat(const ExperimentConfig& config, const std::vector<Encounter>& data,
                           int repeat);

/// Trains one model on split.train, evaluates on split.valid at iteration 0 and
/// every eval_interval iterations, keeps the best snapshot and evaluates it on
/// split.test once. The best model is left in `model_out` when given. Throws
/// NumericalError naming the iteration on a non-finite loss.
RunRecord train_run(const ExperimentConfig& config, const RepeatSetup& setup, int repeat,
                    const Progress& progress = {},
                    std::unique_ptr<models::Model>* model_out = nullptr);

/// Rebuilds the model of a finished repeat from its checkpoint.
std::unique_ptr<models::Model> load_run_model(const std::filesystem::path& checkpoint,
                                              tasks::TaskKind task, tasks::TaskHead& head);

/// Evaluation options a repeat uses (mask and random-adjacency seeds).
EvalOptions eval_options(std::uint64_t run_seed, bool structure);

struct ExperimentResult {
  std::vector<RunRecord> runs;  // ordered by repeat
  /// metric -> summary over repeats of the test metrics.
  std::map<std::string, tasks::Summary> test_summary;
};

/// Runs config.train.repeats independent repeats, at most `jobs` at a time. When
/// `out_dir` is set each repeat's best checkpoint is written there.
ExperimentResult repeat_experiment(const ExperimentConfig& config,
                                   const std::vector<Encounter>& data, int jobs = 1,
                                   const std::optional<std::filesystem::path>& out_dir = {},
                                   const std::function<void(int, const EvalPoint&)>& progress = {});

/// CSV with header model,task,split,seed,metric,value; one row per repeat, split
/// (valid = best checkpoint, test) and metric; values with 6 significant digits.
std::string metrics_csv(const std::vector<RunRecord>& runs);
/// 6-significant-digit rendering used by every human-facing number.
std::string format_number(double v);

nlohmann::json summary_to_json(const ExperimentResult& result);

/// Writes config.json, run_<r>.json, metrics.csv and summary.json into `dir`.
void write_run_directory(const std::filesystem::path& dir, const ExperimentConfig& config,
                         const std::filesystem::path& data_path, const ExperimentResult& result);

}  // namespace gct::harness
