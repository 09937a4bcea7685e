#pragma once

#include "gct/numerics/tape.hpp"
#include "gct/rng.hpp"

#include <span>
#include <vector>

namespace gct {

// Differentiable primitives. Results live on the tape of their first operand.

Tensor matmul(Tensor a, Tensor b);
/// a * b^T
Tensor matmul_nt(Tensor a, Tensor b);
Tensor add(Tensor a, Tensor b);
/// x + bias, bias 1 x cols broadcast over rows.
Tensor add_row(Tensor x, Tensor bias);
Tensor scale(Tensor x, double s);
Tensor relu(Tensor x);
/// Row-wise layer normalization with learnable gain/bias (each 1 x cols).
Tensor layer_norm(Tensor x, Tensor gain, Tensor bias, double eps = 1e-5);
/// Inverted dropout. Identity when !train or rate == 0.
Tensor dropout(Tensor x, double rate, Rng& rng, bool train);
Tensor select_row(Tensor x, Eigen::Index row);
Tensor sum_rows(Tensor x);
Tensor sum_all(Tensor x);

/// Row softmax restricted to unmasked cells (mask entries 0 or masked sentinel).
/// Masked cells are exactly 0. Throws DegenerateRowError on a fully masked row.
Tensor masked_row_softmax(Tensor logits, const Matrix& mask);
Matrix masked_row_softmax(const Matrix& logits, const Matrix& mask);

/// Sum over rows of KL(p_row || q_row); q floored at 1e-12 where p > 0.
Tensor kl_divergence_rows(Tensor p, Tensor q);
double kl_divergence_rows(const Matrix& p, const Matrix& q);
/// Mean over rows of the Shannon entropy (nats).
double row_entropy(const Matrix& p);

/// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets.
Tensor sigmoid_bce(Tensor logits, const Matrix& targets);
/// Cross-entropy of softmax(logits) (1 x K) against class `target`.
Tensor softmax_cross_entropy(Tensor logits, Eigen::Index target);

/// Reference to one row of one embedding table.
struct RowRef {
  std::uint32_t table;
  Eigen::Index row;
};

/// Stacks the referenced rows; gradients scatter straight into the tables' grads.
Tensor embedding_lookup(Tape& tape, std::span<Parameter* const> tables, std::span<const RowRef> rows);

/// One feed-forward layer: linear -> layer norm -> ReLU -> dropout (+ residual).
struct DenseLayer {
  Parameter* weight = nullptr;  // in x out
  Parameter* bias = nullptr;    // 1 x out
  Parameter* ln_gain = nullptr;
  Parameter* ln_bias = nullptr;
};

/// Applies each layer in order, adding the layer input back whenever its input and
/// output widths agree.
Tensor mlp_block(Tensor x, std::span<const DenseLayer> layers, double dropout_rate, bool train,
                 Rng& rng);

/// Glorot-uniform weights: U(+-sqrt(6 / (fan_in + fan_out))).
Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Adds weight/bias/layer-norm parameters for a width in -> out layer.
DenseLayer make_dense_layer(ParameterStore& store, const std::string& prefix, Eigen::Index in,
                            Eigen::Index out, Rng& rng);

}  // namespace gct
