#include "gct/tasks/metrics.hpp"

#include "gct/errors.hpp"
#include "gct/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gct::tasks {

namespace {

/// Indices sorted by descending score, plus the class counts.
std::vector<std::size_t> rank_desc(std::span<const int> labels, std::span<const double> scores,
                                   std::size_t& pos, std::size_t& neg, const char* what) {
  if (labels.size() != scores.size())
    throw DimensionError(std::string(what) + ": labels and scores differ in length");
  pos = neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DomainError(std::string(what) + ": labels must be 0/1");
    if (!std::isfinite(scores[i])) throw DomainError(std::string(what) + ": non-finite score");
    (labels[i] ? pos : neg)++;
  }
  if (pos == 0 || neg == 0)
    throw MetricUndefinedError(std::string(what) + " needs at least one positive and one negative");
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double aucpr(std::span<const int> labels, std::span<const double> scores) {
  std::size_t pos = 0, neg = 0;
  const auto order = rank_desc(labels, scores, pos, neg, "aucpr");
  double ap = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, tp_here = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) tp_here += labels[order[j++]];
    seen += j - i;
    tp += tp_here;
    ap += static_cast<double>(tp_here) / static_cast<double>(pos) *
          (static_cast<double>(tp) / static_cast<double>(seen));
    i = j;
  }
  return ap;
}

double auroc(std::span<const int> labels, std::span<const double> scores) {
  std::size_t pos = 0, neg = 0;
  const auto order = rank_desc(labels, scores, pos, neg, "auroc");
  // Walk from the highest score down; each positive beats every negative below it.
  double u = 0.0;
  std::size_t neg_above = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, p = 0, n = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) (labels[order[j++]] ? p : n)++;
    const double neg_below = static_cast<double>(neg - neg_above - n);
    u += static_cast<double>(p) * (neg_below + 0.5 * static_cast<double>(n));
    neg_above += n;
    i = j;
  }
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

StructureScore structure_eval(std::span<const Matrix> attention, const Matrix& truth) {
  if (attention.empty()) throw TaskError("structure evaluation needs at least one attention map");
  StructureScore s;
  for (const Matrix& a : attention) {
    s.kl_to_truth += kl_divergence_rows(truth, a);
    s.mean_entropy += row_entropy(a);
  }
  s.kl_to_truth /= static_cast<double>(attention.size());
  s.mean_entropy /= static_cast<double>(attention.size());
  return s;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  const auto n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

}  // namespace gct::tasks
