#include "gct/harness/harness.hpp"

#include "gct/errors.hpp"
#include "gct/models/checkpoint.hpp"
#include "gct/numerics/adam.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

namespace gct::harness {

using nlohmann::json;
using models::ModelKind;
using tasks::TaskKind;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (max_iterations < 0) throw ConfigError("iterations must be non-negative");
  if (eval_interval < 1) throw ConfigError("eval interval must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning rate must be positive");
  if (repeats < 1) throw ConfigError("repeats must be at least 1");
  if (!(train_fraction > 0.0) || !(valid_fraction > 0.0) || train_fraction + valid_fraction >= 1.0)
    throw ConfigError("split fractions must be positive and leave room for a test split");
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  tasks::check_compatible(model.kind, task);
}

json to_json(const ExperimentConfig& c) {
  return {{"format_version", kRunFormatVersion},
          {"model", models::to_json(c.model)},
          {"task", tasks::to_string(c.task)},
          {"train",
           {{"batch_size", c.train.batch_size},
            {"max_iterations", c.train.max_iterations},
            {"eval_interval", c.train.eval_interval},
            {"learning_rate", c.train.learning_rate},
            {"seed", c.train.seed},
            {"repeats", c.train.repeats},
            {"train_fraction", c.train.train_fraction},
            {"valid_fraction", c.train.valid_fraction}}}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  try {
    if (j.contains("format_version") && j.at("format_version").get<int>() != kRunFormatVersion)
      throw ConfigError("unsupported config format_version");
    ExperimentConfig c;
    if (j.contains("model")) c.model = models::model_spec_from_json(j.at("model"));
    if (j.contains("task")) c.task = tasks::task_kind_from_string(j.at("task").get<std::string>());
    if (j.contains("train")) {
      const json& t = j.at("train");
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.max_iterations = t.value("max_iterations", c.train.max_iterations);
      c.train.eval_interval = t.value("eval_interval", c.train.eval_interval);
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      c.train.seed = t.value("seed", c.train.seed);
      c.train.repeats = t.value("repeats", c.train.repeats);
      c.train.train_fraction = t.value("train_fraction", c.train.train_fraction);
      c.train.valid_fraction = t.value("valid_fraction", c.train.valid_fraction);
    }
    c.model.validate();
    c.train.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
}

namespace {

// Rows: learning rate, MLP dropout, post-MLP dropout, regularization weight.
// Columns: gcn, gcn-p, gcn-random, shallow, deep, transformer, gct. NaN = no preset.
constexpr double kNo = std::numeric_limits<double>::quiet_NaN();
struct PresetTable {
  const char* prefix;
  double rows[4][7];
};
constexpr PresetTable kPresets[] = {
    {"synthetic/graph-recon",
     {{0.00045, 0.0006, 0.0003, 0.00025, kNo, 0.0007, 0.0005},
      {0.3, 0.01, 0.5, 0.2, kNo, 0.8, 0.3},
      {0.2, 0.02, 0.005, 0, kNo, 0.001, 0.1},
      {0, 0, 0, 0, kNo, 0, 0.02}}},
    {"synthetic/dx-treatment",
     {{0.0001, 0.0001, 0.0001, 0.0002, 0.0008, 0.00015, 0.0001},
      {0.2, 0.3, 0.5, 0.02, 0.01, 0.5, 0.85},
      {0.65, 0.02, 0.4, 0, 0.3, 0.01, 0.03},
      {0, 0, 0, 0, 0, 0, 0.05}}},
    {"synthetic/masked-dx",
     {{0.0003, 0.0007, 0.0002, 0.0007, 0.0004, 0.0003, 0.0001},
      {0.01, 0.8, 0.5, 0.08, 0.12, 0.4, 0.85},
      {0.88, 0.005, 0.5, 0, 0.75, 0.5, 0.6},
      {0, 0, 0, 0, 0, 0, 0.05}}},
    {"eicu/masked-dx",
     {{kNo, 0.0005, 0.0001, 0.0001, 0.00012, 0.0001, 0.0009},
      {kNo, 0.5, 0.3, 0.3, 0.4, 0.87, 0.5},
      {kNo, 0.5, 0.4, 0, 0.45, 0.2, 0.03},
      {kNo, 0, 0, 0, 0, 0, 50.0}}},
    {"eicu/readmission",
     {{kNo, 0.00024, 0.0001, 0.0001, 0.00011, 0.0002, 0.00022},
      {kNo, 0.3, 0.7, 0.63, 0.05, 0.45, 0.08},
      {kNo, 0.1, 0.01, 0, 0.33, 0.28, 0.024},
      {kNo, 0, 0, 0, 0, 0, 0.1}}},
    {"eicu/mortality",
     {{kNo, 0.0003, 0.00013, 0.0001, 0.00015, 0.0006, 0.00011},
      {kNo, 0.85, 0.9, 0.25, 0.01, 0.88, 0.72},
      {kNo, 0.04, 0.01, 0, 0.01, 0.2, 0.005},
      {kNo, 0, 0, 0, 0, 0, 1.5}}},
};
constexpr ModelKind kPresetColumns[] = {ModelKind::GCN,     ModelKind::GCN_P, ModelKind::GCN_random,
                                        ModelKind::Shallow, ModelKind::Deep,  ModelKind::Transformer,
                                        ModelKind::GCT};

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& t : kPresets)
    for (std::size_t c = 0; c < 7; ++c)
      if (!std::isnan(t.rows[0][c]))
        out.push_back(std::string(t.prefix) + "/" + models::to_string(kPresetColumns[c]));
  return out;
}

Preset preset(const std::string& name) {
  for (const auto& t : kPresets)
    for (std::size_t c = 0; c < 7; ++c)
      if (!std::isnan(t.rows[0][c]) &&
          name == std::string(t.prefix) + "/" + models::to_string(kPresetColumns[c]))
        return {t.rows[0][c], t.rows[1][c], t.rows[2][c], t.rows[3][c]};
  throw ConfigError("unknown preset '" + name + "'");
}

void apply_preset(const Preset& p, ExperimentConfig& config) {
  config.train.learning_rate = p.learning_rate;
  config.model.dropout = p.dropout;
  config.model.post_dropout = p.post_dropout;
  config.model.lambda = p.lambda;
}

Split split_dataset(const std::vector<Encounter>& data, std::uint64_t seed, double train_fraction,
                    double valid_fraction) {
  if (data.size() < 10)
    throw ConfigError("need at least 10 encounters to split, got " + std::to_string(data.size()));
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng::derive(seed, "split");
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  const auto n = static_cast<double>(data.size());
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * n));
  const auto n_valid = static_cast<std::size_t>(std::floor(valid_fraction * n));
  Split s;
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& dst = k < n_train ? s.train : (k < n_train + n_valid ? s.valid : s.test);
    dst.push_back(data[order[k]]);
  }
  return s;
}

std::string selection_metric(TaskKind task) {
  return task == TaskKind::MaskedDx ? "accuracy" : "aucpr";
}

EncounterLoss encounter_loss(const models::Model& model, const tasks::TaskHead& head, TaskKind task,
                             const Encounter& e, const graph::CondProbTables& tables,
                             std::uint64_t random_seed, Tape& tape, Rng& rng, bool train) {
  const ModelKind kind = model.spec().kind;
  std::optional<tasks::MaskedDx> masked;
  std::optional<Eigen::Index> node;
  if (task == TaskKind::MaskedDx) {
    masked = tasks::choose_masked_dx(e, rng);
    node = masked->node;
  }
  const models::ModelInput in = models::make_input(kind, e, &tables, random_seed, node);
  models::ForwardOptions opt;
  opt.train = train;
  const models::ModelOutput out = model.forward(tape, in, rng, opt);
  EncounterLoss r{Tensor{}, tasks::task_loss(task, kind, head, out, e, masked)};
  r.total = r.prediction.loss;
  if (out.reg_loss && model.spec().lambda > 0.0)
    r.total = add(r.total, scale(*out.reg_loss, model.spec().lambda));
  return r;
}

namespace {

// AUCPR/AUROC when both classes are present; silently absent otherwise.
void add_ranking(Metrics& m, const std::vector<int>& labels, const std::vector<double>& scores,
                 const std::string& suffix = "") {
  try {
    m["aucpr" + suffix] = tasks::aucpr(labels, scores);
    m["auroc" + suffix] = tasks::auroc(labels, scores);
  } catch (const MetricUndefinedError&) {
  }
}

}  // namespace

Metrics evaluate(const models::Model& model, const tasks::TaskHead& head, TaskKind task,
                 const std::vector<Encounter>& data, const graph::CondProbTables& tables,
                 const EvalOptions& options) {
  const bool structure = options.structure && !models::is_feedforward(model.spec().kind);
  Metrics m;
  std::vector<int> labels[2];
  std::vector<double> scores[2];
  double loss = 0.0, kl = 0.0, entropy = 0.0;
  std::size_t count = 0, correct = 0;
  Tape tape;
  for (const Encounter& e : data) {
    if (options.structure && !e.has_structure())
      throw TaskError("structure evaluation needs ground-truth edges (encounter " +
                      std::to_string(e.id) + " has none)");
    if (!tasks::encounter_supports(task, e)) continue;
    tape.clear();
    Rng rng = Rng::derive(options.mask_seed, "eval", static_cast<std::uint64_t>(e.id));
    const EncounterLoss r =
        encounter_loss(model, head, task, e, tables, options.random_seed, tape, rng, false);
    ++count;
    loss += r.prediction.loss.scalar();
    if (r.prediction.correct) correct += *r.prediction.correct;
    const std::size_t columns = task == TaskKind::DxTreatment ? 2 : 1;
    for (std::size_t i = 0; i < r.prediction.scores.size(); ++i) {
      labels[i % columns].push_back(r.prediction.labels[i]);
      scores[i % columns].push_back(r.prediction.scores[i]);
    }
    if (structure) {
      // Attention maps come from an unmasked forward pass on the same encounter.
      Tape st;
      Rng srng(0);
      const auto in = models::make_input(model.spec().kind, e, &tables, options.random_seed);
      const auto out = model.forward(st, in, srng);
      const auto s = tasks::structure_eval(out.attention, graph::build_true_adjacency(e));
      kl += s.kl_to_truth;
      entropy += s.mean_entropy;
    }
  }
  if (count == 0) throw TaskError("no encounter in this split supports " + tasks::to_string(task));
  const auto n = static_cast<double>(count);
  m["loss"] = loss / n;
  m["encounters"] = n;
  if (task == TaskKind::MaskedDx) {
    m["accuracy"] = static_cast<double>(correct) / n;
  } else if (task == TaskKind::DxTreatment) {
    add_ranking(m, labels[0], scores[0], "_label1");
    add_ranking(m, labels[1], scores[1], "_label2");
    for (const char* metric : {"aucpr", "auroc"}) {
      double sum = 0.0;
      int defined = 0;
      for (const char* label : {"_label1", "_label2"})
        if (auto it = m.find(std::string(metric) + label); it != m.end()) {
          sum += it->second;
          ++defined;
        }
      if (defined > 0) m[metric] = sum / defined;
    }
  } else {
    add_ranking(m, labels[0], scores[0]);
  }
  if (structure) {
    m["kl_to_truth"] = kl / n;
    m["mean_entropy"] = entropy / n;
  }
  return m;
}

EvalOptions eval_options(std::uint64_t run_seed, bool structure) {
  EvalOptions o;
  o.structure = structure;
  o.mask_seed = Rng::derive(run_seed, "eval-mask").next_u64();
  o.random_seed = run_seed;
  return o;
}

std::uint64_t repeat_seed(std::uint64_t master, int repeat) {
  return Rng::derive(master, "repeat", static_cast<std::uint64_t>(repeat)).next_u64();
}

RepeatSetup prepare_repeat(const ExperimentConfig& config, const std::vector<Encounter>& data,
                           int repeat) {
  RepeatSetup s;
  s.run_seed = repeat_seed(config.train.seed, repeat);
  s.split = split_dataset(data, s.run_seed, config.train.train_fraction, config.train.valid_fraction);
  s.tables = graph::CondProbTables::estimate(s.split.train);
  s.vocab = infer_vocab(data);
  return s;
}

namespace {

double selection_value(const Metrics& m, TaskKind task) {
  const auto it = m.find(selection_metric(task));
  return it == m.end() ? -std::numeric_limits<double>::infinity() : it->second;
}

bool all_structured(const std::vector<Encounter>& data) {
  return std::all_of(data.begin(), data.end(), [](const Encounter& e) { return e.has_structure(); });
}

}  // namespace

RunRecord train_run(const ExperimentConfig& config, const RepeatSetup& setup, int repeat,
                    const Progress& progress, std::unique_ptr<models::Model>* model_out) {
  config.validate();
  const TaskKind task = config.task;
  const Split& split = setup.split;
  auto model = std::make_unique<models::Model>(config.model, setup.vocab, setup.run_seed);
  const tasks::TaskHead head = tasks::make_head(*model, task, setup.run_seed);
  ParameterStore& store = model->params();

  std::vector<const Encounter*> usable;
  for (const Encounter& e : split.train)
    if (tasks::encounter_supports(task, e)) usable.push_back(&e);
  if (usable.empty()) throw TaskError("no training encounter supports " + tasks::to_string(task));

  RunRecord rec;
  rec.config = config;
  rec.repeat = repeat;
  rec.run_seed = setup.run_seed;
  rec.train_size = split.train.size();
  rec.valid_size = split.valid.size();
  rec.test_size = split.test.size();

  const EvalOptions eval_opt = eval_options(setup.run_seed, false);
  std::vector<Matrix> best = store.snapshot();
  double best_value = -std::numeric_limits<double>::infinity();
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  auto checkpoint = [&](int iteration) {
    EvalPoint p;
    p.iteration = iteration;
    p.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    p.valid = evaluate(*model, head, task, split.valid, setup.tables, eval_opt);
    loss_sum = 0.0;
    loss_count = 0;
    const double v = selection_value(p.valid, task);
    if (rec.history.empty() || v > best_value) {
      best_value = v;
      best = store.snapshot();
      rec.best_iteration = iteration;
      rec.best_valid = p.valid;
    }
    rec.history.push_back(p);
    if (progress) progress(p);
  };

  checkpoint(0);
  AdamConfig adam_cfg;
  adam_cfg.lr = config.train.learning_rate;
  AdamState adam = make_adam_state(store, adam_cfg);
  const int batch = config.train.batch_size;
  const double inv_batch = 1.0 / static_cast<double>(batch);
  Tape tape;
  for (int it = 1; it <= config.train.max_iterations; ++it) {
    store.zero_grad();
    Rng pick = Rng::derive(setup.run_seed, "batch", static_cast<std::uint64_t>(it));
    for (int k = 0; k < batch; ++k) {
      const Encounter& e = *usable[pick.below(usable.size())];
      Rng rng = Rng::derive(setup.run_seed, "step",
                            static_cast<std::uint64_t>(it) * static_cast<std::uint64_t>(batch) +
                                static_cast<std::uint64_t>(k));
      tape.clear();
      const EncounterLoss r =
          encounter_loss(*model, head, task, e, setup.tables, setup.run_seed, tape, rng, true);
      const double value = r.total.scalar();
      if (!std::isfinite(value))
        throw NumericalError("non-finite training loss at iteration " + std::to_string(it) +
                             " (encounter " + std::to_string(e.id) + ")");
      tape.backward(scale(r.total, inv_batch));
      loss_sum += value;
      ++loss_count;
    }
    try {
      adam_step(store, adam);
    } catch (const OptimizerError& ex) {
      throw NumericalError("iteration " + std::to_string(it) + ": " + ex.what());
    }
    if (it % config.train.eval_interval == 0 || it == config.train.max_iterations) checkpoint(it);
  }

  store.restore(best);
  rec.test = evaluate(*model, head, task, split.test, setup.tables,
                      eval_options(setup.run_seed, all_structured(split.test) &&
                                                       !models::is_feedforward(config.model.kind)));
  if (model_out) *model_out = std::move(model);
  return rec;
}

std::unique_ptr<models::Model> load_run_model(const std::filesystem::path& checkpoint,
                                              TaskKind task, tasks::TaskHead& head) {
  const models::Checkpoint ck = models::read_checkpoint(checkpoint);
  auto model = std::make_unique<models::Model>(ck.spec, ck.vocab, 0);
  head = tasks::make_head(*model, task, 0);
  models::load_parameters(model->params(), ck);
  return model;
}

namespace {

json metrics_json(const Metrics& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[k] = v;
  return j;
}

}  // namespace

json to_json(const RunRecord& r) {
  json history = json::array();
  for (const auto& p : r.history)
    history.push_back({{"iteration", p.iteration}, {"train_loss", p.train_loss},
                       {"valid", metrics_json(p.valid)}});
  return {{"format_version", kRunFormatVersion},
          {"config", to_json(r.config)},
          {"repeat", r.repeat},
          {"run_seed", r.run_seed},
          {"split_sizes", {{"train", r.train_size}, {"valid", r.valid_size}, {"test", r.test_size}}},
          {"history", std::move(history)},
          {"best_iteration", r.best_iteration},
          {"best_valid", metrics_json(r.best_valid)},
          {"test", metrics_json(r.test)},
          {"checkpoint", r.checkpoint}};
}

ExperimentResult repeat_experiment(const ExperimentConfig& config, const std::vector<Encounter>& data,
                                   int jobs, const std::optional<std::filesystem::path>& out_dir,
                                   const std::function<void(int, const EvalPoint&)>& progress) {
  config.validate();
  const int n = config.train.repeats;
  ExperimentResult result;
  result.runs.resize(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  std::mutex progress_mutex;

  auto worker = [&] {
    for (int r = next++; r < n; r = next++) {
      try {
        const RepeatSetup setup = prepare_repeat(config, data, r);
        std::unique_ptr<models::Model> model;
        Progress p;
        if (progress)
          p = [&, r](const EvalPoint& pt) {
            std::lock_guard lock(progress_mutex);
            progress(r, pt);
          };
        RunRecord rec = train_run(config, setup, r, p, &model);
        if (out_dir) {
          rec.checkpoint = "checkpoint_" + std::to_string(r) + ".bin";
          models::save_checkpoint(*out_dir / rec.checkpoint, *model,
                                  {{"repeat", r},
                                   {"run_seed", rec.run_seed},
                                   {"task", tasks::to_string(config.task)},
                                   {"best_iteration", rec.best_iteration}});
        }
        result.runs[static_cast<std::size_t>(r)] = std::move(rec);
      } catch (...) {
        errors[static_cast<std::size_t>(r)] = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(jobs, 1, n);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::map<std::string, std::vector<double>> per_metric;
  for (const auto& run : result.runs)
    for (const auto& [k, v] : run.test) per_metric[k].push_back(v);
  for (const auto& [k, values] : per_metric) result.test_summary[k] = tasks::summarize(values);
  return result;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string metrics_csv(const std::vector<RunRecord>& runs) {
  std::string out = "model,task,split,seed,metric,value\n";
  for (const auto& r : runs) {
    const std::string prefix = models::to_string(r.config.model.kind) + "," +
                               tasks::to_string(r.config.task) + ",";
    for (const auto& [split, metrics] : {std::pair{"valid", &r.best_valid}, std::pair{"test", &r.test}})
      for (const auto& [k, v] : *metrics)
        out += prefix + split + "," + std::to_string(r.run_seed) + "," + k + "," + format_number(v) + "\n";
  }
  return out;
}

json summary_to_json(const ExperimentResult& result) {
  json test = json::object();
  for (const auto& [k, s] : result.test_summary) test[k] = {{"mean", s.mean}, {"std", s.std}};
  json runs = json::array();
  for (const auto& r : result.runs)
    runs.push_back({{"repeat", r.repeat}, {"run_seed", r.run_seed}, {"test", metrics_json(r.test)}});
  json j = {{"format_version", kRunFormatVersion}, {"test", std::move(test)}, {"runs", std::move(runs)}};
  if (!result.runs.empty()) {
    j["model"] = models::to_string(result.runs.front().config.model.kind);
    j["task"] = tasks::to_string(result.runs.front().config.task);
  }
  return j;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw ConfigError("write failed: " + path.string());
}

}  // namespace

void write_run_directory(const std::filesystem::path& dir, const ExperimentConfig& config,
                         const std::filesystem::path& data_path, const ExperimentResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create run directory " + dir.string() + ": " + ec.message());
  json cfg = to_json(config);
  cfg["data"] = data_path.string();
  write_text(dir / "config.json", cfg.dump(2) + "\n");
  for (const auto& r : result.runs)
    write_text(dir / ("run_" + std::to_string(r.repeat) + ".json"), to_json(r).dump(2) + "\n");
  write_text(dir / "metrics.csv", metrics_csv(result.runs));
  write_text(dir / "summary.json", summary_to_json(result).dump(2) + "\n");
}

}  // namespace gct::harness
