#include "gct/models/model.hpp"

#include "gct/errors.hpp"

#include <cmath>

namespace gct::models {

namespace {

constexpr std::uint32_t kVisitTable = 0, kDxTable = 1, kTreatTable = 2, kLabTable = 3,
                        kMaskTable = 4;

struct KindName {
  ModelKind kind;
  const char* name;
};
constexpr KindName kKindNames[] = {
    {ModelKind::GCN, "gcn"},         {ModelKind::GCN_P, "gcn-p"},
    {ModelKind::GCN_random, "gcn-random"}, {ModelKind::Shallow, "shallow"},
    {ModelKind::Deep, "deep"},       {ModelKind::Transformer, "transformer"},
    {ModelKind::GCT, "gct"},
};

std::vector<DenseLayer> make_mlp(ParameterStore& store, const std::string& prefix, int dim,
                                 Rng& rng) {
  return {make_dense_layer(store, prefix + ".mlp0", dim, 2 * dim, rng),
          make_dense_layer(store, prefix + ".mlp1", 2 * dim, dim, rng)};
}

std::vector<DenseLayer> make_stack(ParameterStore& store, const std::string& prefix, int layers,
                                   int dim, Rng& rng) {
  std::vector<DenseLayer> out;
  for (int l = 0; l < layers; ++l)
    out.push_back(make_dense_layer(store, prefix + "." + std::to_string(l), dim, dim, rng));
  return out;
}

}  // namespace

std::string to_string(ModelKind k) {
  for (const auto& kn : kKindNames)
    if (kn.kind == k) return kn.name;
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  for (const auto& kn : kKindNames)
    if (s == kn.name) return kn.kind;
  throw ArgumentError("unknown model '" + s +
                      "' (expected gct, gcn, gcn-p, gcn-random, shallow, deep, transformer)");
}

bool uses_attention(ModelKind k) { return k == ModelKind::Transformer || k == ModelKind::GCT; }
bool is_gcn_family(ModelKind k) {
  return k == ModelKind::GCN || k == ModelKind::GCN_P || k == ModelKind::GCN_random;
}
bool is_feedforward(ModelKind k) { return k == ModelKind::Shallow || k == ModelKind::Deep; }

int ModelSpec::blocks() const {
  if (num_blocks > 0) return num_blocks;
  return is_gcn_family(kind) ? 5 : 3;
}

void ModelSpec::validate() const {
  if (dim < 1) throw ConfigError("embedding dim must be positive");
  if (num_blocks < 0) throw ConfigError("num_blocks must be non-negative");
  if (shallow_layers < 0 || deep_pre_layers < 0 || deep_post_layers < 0)
    throw ConfigError("layer counts must be non-negative");
  if (dropout < 0.0 || dropout >= 1.0 || post_dropout < 0.0 || post_dropout >= 1.0)
    throw ConfigError("dropout rates must lie in [0, 1)");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
}

nlohmann::json to_json(const ModelSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"dim", s.dim},
          {"num_blocks", s.blocks()},
          {"shallow_layers", s.shallow_layers},
          {"deep_pre_layers", s.deep_pre_layers},
          {"deep_post_layers", s.deep_post_layers},
          {"dropout", s.dropout},
          {"post_dropout", s.post_dropout},
          {"lambda", s.lambda},
          {"first_block_kl", s.first_block_kl},
          {"transformer_mask", s.transformer_mask}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  try {
    ModelSpec s;
    s.kind = model_kind_from_string(j.at("kind").get<std::string>());
    s.dim = j.value("dim", s.dim);
    s.num_blocks = j.value("num_blocks", s.num_blocks);
    s.shallow_layers = j.value("shallow_layers", s.shallow_layers);
    s.deep_pre_layers = j.value("deep_pre_layers", s.deep_pre_layers);
    s.deep_post_layers = j.value("deep_post_layers", s.deep_post_layers);
    s.dropout = j.value("dropout", s.dropout);
    s.post_dropout = j.value("post_dropout", s.post_dropout);
    s.lambda = j.value("lambda", s.lambda);
    s.first_block_kl = j.value("first_block_kl", s.first_block_kl);
    s.transformer_mask = j.value("transformer_mask", s.transformer_mask);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model spec: ") + e.what());
  }
}

ModelInput make_input(ModelKind kind, const Encounter& e, const graph::CondProbTables* tables,
                      std::uint64_t random_seed, std::optional<Eigen::Index> masked_node) {
  ModelInput in;
  in.encounter = &e;
  in.masked_node = masked_node;
  const auto idx = graph::NodeIndexing::of(e);
  auto prior = [&] {
    if (!tables) throw ArgumentError(to_string(kind) + " needs conditional probability tables");
    Matrix p = graph::build_prior(e, *tables);
    if (masked_node) p = graph::mask_diagnosis_in_prior(p, idx, *masked_node);
    return p;
  };
  switch (kind) {
    case ModelKind::GCN:
      in.propagation = graph::build_true_adjacency(e);
      break;
    case ModelKind::GCN_P:
      in.propagation = prior();
      break;
    case ModelKind::GCN_random: {
      Rng rng = Rng::derive(random_seed, "gcn-random", static_cast<std::uint64_t>(e.id));
      in.propagation = graph::random_adjacency(idx.size(), rng);
      break;
    }
    case ModelKind::GCT:
      in.propagation = prior();
      in.mask = graph::build_mask(e);
      break;
    case ModelKind::Transformer:
      in.mask = graph::build_mask(e);
      break;
    case ModelKind::Shallow:
    case ModelKind::Deep:
      break;
  }
  return in;
}

Model::Model(ModelSpec spec, Vocab vocab, std::uint64_t seed) : spec_(spec), vocab_(vocab) {
  spec_.validate();
  if (vocab.num_dx < 1 || vocab.num_treat < 1 || vocab.num_lab < 1)
    throw ConfigError("vocabulary sizes must be positive");
  Rng rng = Rng::derive(seed, "init");
  const int d = spec_.dim;
  tables_ = {&params_.add("embed.visit", glorot_uniform(1, d, rng)),
             &params_.add("embed.dx", glorot_uniform(vocab.num_dx, d, rng)),
             &params_.add("embed.treat", glorot_uniform(vocab.num_treat, d, rng)),
             &params_.add("embed.lab", glorot_uniform(vocab.num_lab, d, rng)),
             &params_.add("embed.mask", glorot_uniform(1, d, rng))};

  if (is_feedforward(spec_.kind)) {
    if (spec_.kind == ModelKind::Shallow) {
      pre_ = make_stack(params_, "shallow", spec_.shallow_layers, d, rng);
    } else {
      pre_ = make_stack(params_, "deep.pre", spec_.deep_pre_layers, d, rng);
      post_ = make_stack(params_, "deep.post", spec_.deep_post_layers, d, rng);
    }
    return;
  }
  for (int j = 0; j < spec_.blocks(); ++j) {
    const std::string prefix = "block" + std::to_string(j);
    Block b;
    if (uses_attention(spec_.kind)) {
      b.wq = &params_.add(prefix + ".wq", glorot_uniform(d, d, rng));
      b.wk = &params_.add(prefix + ".wk", glorot_uniform(d, d, rng));
      b.w = &params_.add(prefix + ".wv", glorot_uniform(d, d, rng));
    } else {
      b.w = &params_.add(prefix + ".w", glorot_uniform(d, d, rng));
    }
    b.mlp = make_mlp(params_, prefix, d, rng);
    blocks_.push_back(std::move(b));
  }
}

Tensor Model::embed(Tape& tape, const Encounter& e, std::optional<Eigen::Index> masked_node) const {
  std::vector<RowRef> rows;
  rows.reserve(e.num_nodes());
  rows.push_back({kVisitTable, 0});
  auto add = [&](const std::vector<int>& codes, std::uint32_t table, int limit, const char* what) {
    for (int c : codes) {
      if (c < 0 || c >= limit)
        throw VocabularyError(std::string(what) + " code " + std::to_string(c) +
                              " outside vocabulary of size " + std::to_string(limit) +
                              " (encounter " + std::to_string(e.id) + ")");
      rows.push_back({table, c});
    }
  };
  add(e.dx, kDxTable, vocab_.num_dx, "diagnosis");
  add(e.treat, kTreatTable, vocab_.num_treat, "treatment");
  add(e.lab, kLabTable, vocab_.num_lab, "lab");
  if (masked_node) {
    const auto i = static_cast<std::size_t>(*masked_node);
    if (*masked_node < 0 || i >= rows.size()) throw ArgumentError("masked node out of range");
    rows[i] = {kMaskTable, 0};
  }
  return embedding_lookup(tape, tables_, rows);
}

Tensor Model::propagate(const Block& b, Tensor a, Tensor c, Rng& rng, bool train) const {
  Tape& tape = *c.tape();
  Tensor x = matmul(a, matmul(c, tape.param(*b.w)));
  Tensor h = add(x, mlp_block(x, b.mlp, spec_.dropout, train, rng));
  return dropout(h, spec_.post_dropout, rng, train);
}

ModelOutput Model::forward(Tape& tape, const ModelInput& in, Rng& rng,
                           const ForwardOptions& options) const {
  if (!in.encounter) throw ArgumentError("model input has no encounter");
  Tensor c = embed(tape, *in.encounter, in.masked_node);
  if (is_feedforward(spec_.kind)) return forward_feedforward(tape, c, rng, options.train);
  if (is_gcn_family(spec_.kind)) return forward_gcn(tape, in, c, rng, options.train);
  return forward_attention(tape, in, c, rng, options);
}

ModelOutput Model::forward_gcn(Tape& tape, const ModelInput& in, Tensor c, Rng& rng,
                               bool train) const {
  if (in.propagation.rows() != c.rows())
    throw ContractError("propagation matrix does not match the encounter size");
  graph::require_row_stochastic(in.propagation, "propagation matrix");
  ModelOutput out;
  Tensor a = tape.constant(in.propagation);
  for (const Block& b : blocks_) {
    c = propagate(b, a, c, rng, train);
    out.attention.push_back(in.propagation);
  }
  out.nodes = c;
  out.visit = select_row(c, 0);
  return out;
}

ModelOutput Model::forward_attention(Tape& tape, const ModelInput& in, Tensor c, Rng& rng,
                                     const ForwardOptions& opt) const {
  const Eigen::Index n = c.rows();
  const bool gct = spec_.kind == ModelKind::GCT;
  const bool masked = gct || spec_.transformer_mask;
  const Matrix mask = masked ? in.mask : Matrix::Zero(n, n);
  if (mask.rows() != n || mask.cols() != n)
    throw ContractError("attention mask does not match the encounter size");
  if (opt.pinned_attention && (opt.pinned_attention->rows() != n || opt.pinned_attention->cols() != n))
    throw ContractError("pinned attention does not match the encounter size");

  Tensor prior;
  if (gct) {
    if (in.propagation.rows() != n || in.propagation.cols() != n)
      throw ContractError("prior does not match the encounter size");
    graph::require_row_stochastic(in.propagation, "prior");
    for (Eigen::Index i = 0; i < mask.size(); ++i)
      if (is_masked(mask.data()[i]) && in.propagation.data()[i] != 0.0)
        throw ContractError("prior has mass on a masked cell");
    prior = tape.constant(in.propagation);
  }

  ModelOutput out;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(spec_.dim));
  std::optional<Tensor> reg;
  auto add_reg = [&](Tensor term) { reg = reg ? add(*reg, term) : term; };
  Tensor previous;  // attention of the preceding block (GCT)
  for (std::size_t j = 0; j < blocks_.size(); ++j) {
    const Block& b = blocks_[j];
    Tensor a;
    if (opt.pinned_attention) {
      a = tape.constant(*opt.pinned_attention);
    } else if (gct && j == 0 && !spec_.first_block_kl) {
      a = prior;
      previous = prior;
    } else {
      Tensor logits = scale(matmul_nt(matmul(c, tape.param(*b.wq)), matmul(c, tape.param(*b.wk))),
                            inv_sqrt_d);
      Tensor att = masked_row_softmax(logits, mask);
      if (gct) {
        add_reg(kl_divergence_rows(j == 0 ? prior : previous, att));
        previous = att;
        a = j == 0 ? prior : att;
      } else {
        a = att;
      }
    }
    out.attention.push_back(a.value());
    c = propagate(b, a, c, rng, opt.train);
  }
  out.nodes = c;
  out.visit = select_row(c, 0);
  if (gct) out.reg_loss = reg ? *reg : tape.constant(Matrix::Zero(1, 1));
  return out;
}

ModelOutput Model::forward_feedforward(Tape& /*tape*/, Tensor c, Rng& rng, bool train) const {
  ModelOutput out;
  c = mlp_block(c, pre_, spec_.dropout, train, rng);
  out.nodes = c;
  Tensor v = sum_rows(c);
  if (!post_.empty()) v = mlp_block(v, post_, spec_.dropout, train, rng);
  out.visit = v;
  return out;
}

}  // namespace gct::models
