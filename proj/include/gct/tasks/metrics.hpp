#pragma once

#include "gct/numerics/tape.hpp"

#include <span>
#include <vector>

namespace gct::tasks {

/// Average precision: sum over distinct descending thresholds of
/// precision * (recall increment). Throws MetricUndefinedError unless both classes
/// are present.
double aucpr(std::span<const int> labels, std::span<const double> scores);
/// Normalized Mann-Whitney U; tied positive/negative pairs count 1/2.
double auroc(std::span<const int> labels, std::span<const double> scores);

struct StructureScore {
  double kl_to_truth = 0.0;   // block-averaged sum-over-rows KL(truth || attention)
  double mean_entropy = 0.0;  // block-averaged mean row entropy
};

/// Compares every attention map with the normalized true adjacency.
StructureScore structure_eval(std::span<const Matrix> attention, const Matrix& truth);

/// Mean and sample standard deviation (0 for a single value).
struct Summary {
  double mean = 0.0;
  double std = 0.0;
};
Summary summarize(std::span<const double> values);

}  // namespace gct::tasks
