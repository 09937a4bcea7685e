// gct: generate synthetic encounters, train and evaluate encoders, dump attention.
// Exit codes: 0 success, 2 usage or contract error, 3 numerical failure.

#include "gct/dataset.hpp"
#include "gct/errors.hpp"
#include "gct/graph/graph.hpp"
#include "gct/harness/harness.hpp"
#include "gct/synthgen/synthgen.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gct;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw ConfigError("write failed: " + path.string());
}

const Encounter& find_encounter(const std::vector<Encounter>& data, std::int64_t id) {
  for (const auto& e : data)
    if (e.id == id) return e;
  throw ArgumentError("encounter " + std::to_string(id) + " not found in dataset");
}

std::string node_label(const Encounter& e, const graph::NodeIndexing& idx, Eigen::Index i) {
  const NodeRef r = idx.node(i);
  const auto p = static_cast<std::size_t>(r.position);
  switch (r.kind) {
    case NodeKind::Visit: return "Visit";
    case NodeKind::Dx: return "D_" + std::to_string(e.dx[p]);
    case NodeKind::Treatment: return "T_" + std::to_string(e.treat[p]);
    case NodeKind::Lab: return "L_" + std::to_string(e.lab[p]);
  }
  return "?";
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

/// A finished training run: its config, data, and per-repeat artifacts.
struct RunDir {
  fs::path dir;
  harness::ExperimentConfig config;
  fs::path data_path;
  std::vector<Encounter> data;

  static RunDir open(const fs::path& dir) {
    RunDir r;
    r.dir = dir;
    const json cfg = read_json_file(dir / "config.json");
    r.config = harness::experiment_config_from_json(cfg);
    if (!cfg.contains("data")) throw ConfigError("run config has no data path");
    r.data_path = cfg.at("data").get<std::string>();
    r.data = read_jsonl(r.data_path);
    return r;
  }

  std::unique_ptr<models::Model> model(int repeat, tasks::TaskHead& head) const {
    const fs::path ck = dir / ("checkpoint_" + std::to_string(repeat) + ".bin");
    if (!fs::exists(ck)) throw ConfigError("missing checkpoint " + ck.string());
    return harness::load_run_model(ck, config.task, head);
  }
};

// ---- gen -------------------------------------------------------------------

struct GenArgs {
  std::string config, out, labels = "none";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> encounters;
  std::optional<int> vocab;
};

int run_gen(const GenArgs& a) {
  synth::SyntheticConfig c;
  if (!a.config.empty()) c = synth::synthetic_config_from_json(read_json_file(a.config));
  if (a.seed) c.seed = *a.seed;
  if (a.encounters) c.num_encounters = *a.encounters;
  if (a.vocab) c.num_dx = c.num_treat = c.num_lab = *a.vocab;
  c.validate();
  std::optional<synth::DxTreatmentLabelSpec> labels;
  if (a.labels == "dx-treatment") labels.emplace();
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = synth::generate_dataset(c, labels);
  write_jsonl(a.out, data);
  const DatasetStats s = compute_stats(data);
  json stats = stats_to_json(s);
  stats["generator"] = synth::to_json(c);
  write_json_file(stats_sidecar_path(a.out), stats);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << "wrote " << data.size() << " encounters to " << a.out << " ("
            << harness::format_number(secs) << " s); mean dx/treatment/lab per visit "
            << harness::format_number(s.mean_dx) << " / " << harness::format_number(s.mean_treat)
            << " / " << harness::format_number(s.mean_lab) << "\n";
  return 0;
}

// ---- prior -----------------------------------------------------------------

struct PriorArgs {
  std::string data, run, out;
  std::int64_t encounter = 0;
  int repeat = 0;
};

int run_prior(const PriorArgs& a) {
  std::vector<Encounter> data;
  graph::CondProbTables tables;
  std::string source;
  if (!a.run.empty()) {
    const RunDir run = RunDir::open(a.run);
    data = run.data;
    tables = harness::prepare_repeat(run.config, data, a.repeat).tables;
    source = "train split of repeat " + std::to_string(a.repeat);
  } else {
    if (a.data.empty()) throw ConfigError("prior needs --data or --run");
    data = read_jsonl(a.data);
    tables = graph::CondProbTables::estimate(data);
    source = "whole dataset";
  }
  const Encounter& e = find_encounter(data, a.encounter);
  const auto idx = graph::NodeIndexing::of(e);
  json labels = json::array();
  for (Eigen::Index i = 0; i < idx.size(); ++i) labels.push_back(node_label(e, idx, i));
  const Matrix mask = graph::build_mask(e);
  const Matrix allowed = (mask.array() > kMaskedThreshold).cast<double>().matrix();
  json j = {{"format_version", kDatasetFormatVersion},
            {"encounter", e.id},
            {"tables", source},
            {"nodes", labels},
            {"prior", matrix_json(graph::build_prior(e, tables))},
            {"mask_allowed", matrix_json(allowed)}};
  if (e.has_structure()) j["true_adjacency"] = matrix_json(graph::build_true_adjacency(e));
  if (a.out.empty())
    std::cout << j.dump(2) << '\n';
  else
    write_json_file(a.out, j);
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data, model, task, preset, config, out;
  std::optional<double> lr, dropout, post_dropout, lambda;
  std::optional<int> dim, blocks, iterations, batch, eval_interval, repeats;
  std::optional<std::uint64_t> seed;
  bool no_first_block_kl = false, transformer_mask = false, quiet = false;
  int jobs = 1;
};

int run_train(const TrainArgs& a) {
  harness::ExperimentConfig c;
  if (!a.config.empty()) c = harness::experiment_config_from_json(read_json_file(a.config));
  if (!a.model.empty()) c.model.kind = models::model_kind_from_string(a.model);
  if (!a.task.empty()) c.task = tasks::task_kind_from_string(a.task);
  if (!a.preset.empty()) harness::apply_preset(harness::preset(a.preset), c);
  if (a.lr) c.train.learning_rate = *a.lr;
  if (a.dropout) c.model.dropout = *a.dropout;
  if (a.post_dropout) c.model.post_dropout = *a.post_dropout;
  if (a.lambda) c.model.lambda = *a.lambda;
  if (a.dim) c.model.dim = *a.dim;
  if (a.blocks) c.model.num_blocks = *a.blocks;
  if (a.iterations) c.train.max_iterations = *a.iterations;
  if (a.batch) c.train.batch_size = *a.batch;
  if (a.eval_interval) c.train.eval_interval = *a.eval_interval;
  if (a.repeats) c.train.repeats = *a.repeats;
  if (a.seed) c.train.seed = *a.seed;
  if (a.no_first_block_kl) c.model.first_block_kl = false;
  if (a.transformer_mask) c.model.transformer_mask = true;
  c.validate();

  const auto data = read_jsonl(a.data);
  fs::create_directories(a.out);
  const auto t0 = std::chrono::steady_clock::now();
  std::function<void(int, const harness::EvalPoint&)> progress;
  if (!a.quiet)
    progress = [&](int r, const harness::EvalPoint& p) {
      const std::string metric = harness::selection_metric(c.task);
      const auto it = p.valid.find(metric);
      std::cerr << "repeat " << r << " iter " << p.iteration << " train_loss "
                << harness::format_number(p.train_loss) << " valid " << metric << " "
                << (it == p.valid.end() ? std::string("n/a") : harness::format_number(it->second))
                << "\n";
    };
  const auto result = harness::repeat_experiment(c, data, a.jobs, fs::path(a.out), progress);
  harness::write_run_directory(a.out, c, fs::absolute(a.data), result);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << models::to_string(c.model.kind) << " " << tasks::to_string(c.task) << " test";
  for (const auto& [k, s] : result.test_summary)
    if (k != "encounters")
      std::cout << "  " << k << " " << harness::format_number(s.mean) << " ("
                << harness::format_number(s.std) << ")";
  std::cout << "\n";
  std::cerr << "finished in " << harness::format_number(secs) << " s; artifacts in " << a.out << "\n";
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string run, split = "test", out;
  bool structure = false;
};

int run_eval(const EvalArgs& a) {
  const RunDir run = RunDir::open(a.run);
  if (a.structure)
    for (const auto& e : run.data)
      if (!e.has_structure())
        throw TaskError("--structure needs ground-truth edges; " + run.data_path.string() +
                        " has records without them");
  std::ostringstream csv;
  csv << "model,task,split,seed,metric,value\n";
  std::map<std::string, std::vector<double>> per_metric;
  for (int r = 0; r < run.config.train.repeats; ++r) {
    const auto setup = harness::prepare_repeat(run.config, run.data, r);
    tasks::TaskHead head;
    const auto model = run.model(r, head);
    const auto& split = a.split == "valid" ? setup.split.valid : setup.split.test;
    const auto m = harness::evaluate(*model, head, run.config.task, split, setup.tables,
                                     harness::eval_options(setup.run_seed, a.structure));
    for (const auto& [k, v] : m) {
      csv << models::to_string(run.config.model.kind) << "," << tasks::to_string(run.config.task)
          << "," << a.split << "," << setup.run_seed << "," << k << ","
          << harness::format_number(v) << "\n";
      per_metric[k].push_back(v);
    }
  }
  std::cout << csv.str();
  if (a.structure) {
    std::cout << "\nmodel\tKL to truth\tentropy\n" << models::to_string(run.config.model.kind);
    for (const char* k : {"kl_to_truth", "mean_entropy"}) {
      const auto it = per_metric.find(k);
      if (it == per_metric.end()) {
        std::cout << "\tn/a";
        continue;
      }
      const auto s = tasks::summarize(it->second);
      std::cout << "\t" << harness::format_number(s.mean) << " (" << harness::format_number(s.std)
                << ")";
    }
    std::cout << "\n";
  }
  if (!a.out.empty()) {
    std::ofstream f(a.out, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot open for writing: " + a.out);
    f << csv.str();
  }
  return 0;
}

// ---- attn-dump -------------------------------------------------------------

struct DumpArgs {
  std::string run, out;
  std::int64_t encounter = 0;
  long node = 0;
  int repeat = 0;
};

int run_attn_dump(const DumpArgs& a) {
  const RunDir run = RunDir::open(a.run);
  const Encounter& e = find_encounter(run.data, a.encounter);
  const auto idx = graph::NodeIndexing::of(e);
  if (a.node < 0 || a.node >= idx.size())
    throw ArgumentError("node " + std::to_string(a.node) + " not in encounter " +
                        std::to_string(e.id) + " (" + std::to_string(idx.size()) + " nodes)");
  if (models::is_feedforward(run.config.model.kind))
    throw ArgumentError(models::to_string(run.config.model.kind) + " has no attention maps");
  const auto setup = harness::prepare_repeat(run.config, run.data, a.repeat);
  tasks::TaskHead head;
  const auto model = run.model(a.repeat, head);
  const auto in = models::make_input(run.config.model.kind, e, &setup.tables, setup.run_seed);
  Tape tape;
  Rng rng(0);
  const auto out = model->forward(tape, in, rng);

  const Eigen::Index node = a.node;
  Matrix truth;
  if (e.has_structure()) truth = graph::build_true_adjacency(e);
  json nodes = json::array();
  for (Eigen::Index i = 0; i < idx.size(); ++i) {
    json n = {{"index", i}, {"label", node_label(e, idx, i)}};
    if (e.has_structure()) n["true_connection"] = i != node && truth(node, i) > 0.0;
    nodes.push_back(std::move(n));
  }
  json blocks = json::array();
  for (std::size_t j = 0; j < out.attention.size(); ++j) {
    json row = json::array();
    for (Eigen::Index i = 0; i < idx.size(); ++i) row.push_back(out.attention[j](node, i));
    blocks.push_back({{"block", j + 1}, {"attention", std::move(row)}});
  }
  const json dump = {{"format_version", kDatasetFormatVersion},
                     {"model", models::to_string(run.config.model.kind)},
                     {"repeat", a.repeat},
                     {"encounter", e.id},
                     {"node", node},
                     {"node_label", node_label(e, idx, node)},
                     {"nodes", std::move(nodes)},
                     {"blocks", std::move(blocks)}};
  if (a.out.empty())
    std::cout << dump.dump(2) << '\n';
  else
    write_json_file(a.out, dump);
  return 0;
}

// ---- stats -----------------------------------------------------------------

int run_stats(const std::string& data, const std::string& out) {
  const json j = stats_to_json(compute_stats(read_jsonl(data)));
  if (out.empty())
    std::cout << j.dump(2) << '\n';
  else
    write_json_file(out, j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph Convolutional Transformer experiments on encounter records"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset (JSONL + .stats.json sidecar)");
  g->add_option("--config", gen.config, "Generator config JSON");
  g->add_option("--out", gen.out, "Output JSONL")->required();
  g->add_option("--labels", gen.labels, "Plant diagnosis-treatment labels")
      ->check(CLI::IsMember({"dx-treatment", "none"}));
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--encounters", gen.encounters, "Encounters to keep after filtering");
  g->add_option("--vocab", gen.vocab, "Vocabulary size of every code kind");

  PriorArgs prior;
  auto* p = app.add_subcommand("prior", "Write an encounter's prior, mask and true adjacency");
  p->add_option("--data", prior.data, "Dataset JSONL (tables from the whole file)");
  p->add_option("--run", prior.run, "Run directory (tables from that repeat's train split)");
  p->add_option("--repeat", prior.repeat, "Repeat index with --run");
  p->add_option("--encounter", prior.encounter, "Encounter id")->required();
  p->add_option("--out", prior.out, "Output JSON (stdout if omitted)");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train with validation-based selection over repeats");
  t->add_option("--data", train.data, "Dataset JSONL")->required();
  t->add_option("--model", train.model, "gct|gcn|gcn-p|gcn-random|shallow|deep|transformer");
  t->add_option("--task", train.task, "graph-recon|dx-treatment|masked-dx|readmission|mortality");
  t->add_option("--preset", train.preset, "Named hyperparameters, e.g. synthetic/graph-recon/gct");
  t->add_option("--config", train.config, "Experiment config JSON");
  t->add_option("--out", train.out, "Run directory")->required();
  t->add_option("--lr", train.lr, "Adam learning rate");
  t->add_option("--dropout", train.dropout, "MLP dropout rate");
  t->add_option("--post-dropout", train.post_dropout, "Post-MLP dropout rate");
  t->add_option("--lambda", train.lambda, "GCT regularization weight");
  t->add_option("--dim", train.dim, "Embedding size");
  t->add_option("--blocks", train.blocks, "Attention blocks / convolution steps");
  t->add_option("--iterations", train.iterations, "Minibatch updates");
  t->add_option("--batch", train.batch, "Minibatch size");
  t->add_option("--eval-interval", train.eval_interval, "Iterations between validation passes");
  t->add_option("--repeats", train.repeats, "Independent splits");
  t->add_option("--seed", train.seed, "Master seed");
  t->add_option("--jobs", train.jobs, "Repeats to run in parallel")->check(CLI::PositiveNumber);
  t->add_flag("--no-first-block-kl", train.no_first_block_kl,
              "GCT: propagate block 1 with the prior without computing its attention");
  t->add_flag("--transformer-mask", train.transformer_mask, "Transformer: apply the hierarchy mask");
  t->add_flag("--quiet", train.quiet, "No progress output");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate every repeat's best checkpoint");
  e->add_option("--run", ev.run, "Run directory")->required();
  e->add_option("--split", ev.split, "test|valid")->check(CLI::IsMember({"test", "valid"}));
  e->add_flag("--structure", ev.structure, "Add KL-to-truth and attention entropy");
  e->add_option("--out", ev.out, "Also write the CSV here");

  DumpArgs dump;
  auto* d = app.add_subcommand("attn-dump", "Attention of one node, per block, as JSON");
  d->add_option("--run", dump.run, "Run directory")->required();
  d->add_option("--encounter", dump.encounter, "Encounter id")->required();
  d->add_option("--node", dump.node, "Node index (0 = visit)")->required();
  d->add_option("--repeat", dump.repeat, "Repeat whose checkpoint to use");
  d->add_option("--out", dump.out, "Output JSON (stdout if omitted)");

  std::string stats_data, stats_out;
  auto* s = app.add_subcommand("stats", "Dataset statistics as JSON");
  s->add_option("--data", stats_data, "Dataset JSONL")->required();
  s->add_option("--out", stats_out, "Output JSON (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*g) return run_gen(gen);
    if (*p) return run_prior(prior);
    if (*t) return run_train(train);
    if (*e) return run_eval(ev);
    if (*d) return run_attn_dump(dump);
    if (*s) return run_stats(stats_data, stats_out);
  } catch (const NumericalError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitNumerical;
  } catch (const OptimizerError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
