#pragma once

// Encounter encoders: GCN family (true adjacency, prior, random), single-head
// Transformer, GCT, and the Shallow/Deep feed-forward baselines. Every model maps an
// encounter to node embeddings C (N x dim) and a visit embedding v (1 x dim).

#include "gct/encounter.hpp"
#include "gct/graph/graph.hpp"
#include "gct/numerics/ops.hpp"

#include "json.hpp"

#include <optional>
#include <string>
#include <vector>

namespace gct::models {

enum class ModelKind { GCN, GCN_P, GCN_random, Shallow, Deep, Transformer, GCT };

/// "gcn", "gcn-p", "gcn-random", "shallow", "deep", "transformer", "gct".
std::string to_string(ModelKind k);
/// Throws ArgumentError on an unknown name.
ModelKind model_kind_from_string(const std::string& s);

bool uses_attention(ModelKind k);  // Transformer, GCT
bool is_gcn_family(ModelKind k);   // GCN, GCN_P, GCN_random
bool is_feedforward(ModelKind k);  // Shallow, Deep

struct ModelSpec {
  ModelKind kind = ModelKind::GCT;
  int dim = 128;
  /// Attention blocks or convolution steps; 0 selects 3 (Transformer/GCT) or 5 (GCN).
  int num_blocks = 0;
  int shallow_layers = 15;
  int deep_pre_layers = 8;
  int deep_post_layers = 7;
  double dropout = 0.0;       // inside each MLP
  double post_dropout = 0.0;  // on each block output
  double lambda = 0.0;        // GCT regularization weight
  /// GCT: include KL(P || A1) for the first block's computed attention.
  bool first_block_kl = true;
  /// Transformer: apply the hierarchy mask (the baseline runs unmasked).
  bool transformer_mask = false;

  int blocks() const;
  /// Throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const ModelSpec& s);
ModelSpec model_spec_from_json(const nlohmann::json& j);

/// Per-encounter matrices a forward pass needs.
struct ModelInput {
  const Encounter* encounter = nullptr;
  /// GCN family: the propagation matrix. GCT: the prior P. Empty otherwise.
  Matrix propagation;
  /// GCT and masked Transformer: the attention mask. Empty otherwise.
  Matrix mask;
  /// Node whose embedding is replaced by the mask token.
  std::optional<Eigen::Index> masked_node;
};

/// Builds the input for `kind`. `tables` is required for GCN_P and GCT; the random
/// adjacency is keyed by (random_seed, encounter id) so it is fixed per encounter.
/// With `masked_node` set, the node's prior row/column are masked as well.
ModelInput make_input(ModelKind kind, const Encounter& e, const graph::CondProbTables* tables,
                      std::uint64_t random_seed, std::optional<Eigen::Index> masked_node = {});

struct ModelOutput {
  Tensor nodes;  // C, N x dim
  Tensor visit;  // v, 1 x dim
  /// One map per block: the matrix that propagated in that block.
  std::vector<Matrix> attention;
  /// Sum of the GCT KL terms (1 x 1); unset for other models.
  std::optional<Tensor> reg_loss;
};

struct ForwardOptions {
  bool train = false;
  /// Transformer only: use this matrix as every block's attention.
  const Matrix* pinned_attention = nullptr;
};

class Model {
 public:
  /// Parameters are initialized from stream (seed, "init").
  Model(ModelSpec spec, Vocab vocab, std::uint64_t seed);

  /// `rng` drives dropout and is only consumed when options.train is set.
  ModelOutput forward(Tape& tape, const ModelInput& input, Rng& rng,
                      const ForwardOptions& options = {}) const;

  const ModelSpec& spec() const { return spec_; }
  const Vocab& vocab() const { return vocab_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

 private:
  struct Block {
    Parameter* w = nullptr;  // W (GCN) or W_V
    Parameter* wq = nullptr;
    Parameter* wk = nullptr;
    std::vector<DenseLayer> mlp;
  };

  Tensor embed(Tape& tape, const Encounter& e, std::optional<Eigen::Index> masked_node) const;
  Tensor propagate(const Block& b, Tensor a, Tensor c, Rng& rng, bool train) const;
  ModelOutput forward_gcn(Tape& tape, const ModelInput& in, Tensor c, Rng& rng, bool train) const;
  ModelOutput forward_attention(Tape& tape, const ModelInput& in, Tensor c, Rng& rng,
                                const ForwardOptions& opt) const;
  ModelOutput forward_feedforward(Tape& tape, Tensor c, Rng& rng, bool train) const;

  ModelSpec spec_;
  Vocab vocab_;
  ParameterStore params_;
  std::vector<Parameter*> tables_;  // visit, dx, treatment, lab, mask token
  std::vector<Block> blocks_;
  std::vector<DenseLayer> pre_, post_;
};

}  // namespace gct::models
