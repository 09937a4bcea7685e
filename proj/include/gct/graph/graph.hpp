#pragma once

// Per-encounter matrices over the node layout [visit | dx block | treatment block |
// lab block]: attention mask, conditional-probability prior, true adjacency.

#include "gct/encounter.hpp"
#include "gct/numerics/tape.hpp"
#include "gct/rng.hpp"

#include <span>
#include <unordered_map>

namespace gct::graph {

struct NodeIndexing {
  Eigen::Index num_dx = 0;
  Eigen::Index num_treat = 0;
  Eigen::Index num_lab = 0;

  static NodeIndexing of(const Encounter& e);

  Eigen::Index size() const { return 1 + num_dx + num_treat + num_lab; }
  Eigen::Index dx_begin() const { return 1; }
  Eigen::Index treat_begin() const { return 1 + num_dx; }
  Eigen::Index lab_begin() const { return 1 + num_dx + num_treat; }

  Eigen::Index index(const NodeRef& ref) const;
  NodeRef node(Eigen::Index i) const;
  NodeKind kind(Eigen::Index i) const { return node(i).kind; }
};

/// Encounter-level co-occurrence estimates of p(m|d), p(d|m), p(r|m), p(m|r).
/// A code counts once per encounter however often it repeats.
class CondProbTables {
 public:
  static CondProbTables estimate(std::span<const Encounter> encounters);

  double p_treat_given_dx(int m, int d) const;
  double p_dx_given_treat(int d, int m) const;
  double p_lab_given_treat(int r, int m) const;
  double p_treat_given_lab(int m, int r) const;

  std::size_t num_encounters() const { return num_encounters_; }

  friend bool operator==(const CondProbTables&, const CondProbTables&) = default;

 private:
  static std::uint64_t key(int a, int b);
  static double ratio(const std::unordered_map<std::uint64_t, std::int64_t>& joint,
                      const std::unordered_map<int, std::int64_t>& marginal, int given,
                      std::uint64_t k);

  std::size_t num_encounters_ = 0;
  std::unordered_map<int, std::int64_t> n_dx_, n_treat_, n_lab_;
  std::unordered_map<std::uint64_t, std::int64_t> n_dx_treat_;   // key(d, m)
  std::unordered_map<std::uint64_t, std::int64_t> n_treat_lab_;  // key(m, r)
};

/// 0 where attention is allowed (diagonal, visit <-> all, dx <-> treatment,
/// treatment <-> lab), kMaskedValue elsewhere.
Matrix build_mask(const Encounter& e);

/// Green cells (diagonal, visit row/column) get green_value; a dx->treatment cell
/// gets p(m|d), treatment->dx p(d|m), treatment->lab p(r|m), lab->treatment p(m|r);
/// masked cells 0; then every row is normalized.
Matrix build_prior(const Encounter& e, const CondProbTables& tables, double green_value = 1.0);

/// Row-normalized (A + I) of the undirected ground-truth graph. Throws
/// StructuralError when the encounter has no edges.
Matrix build_true_adjacency(const Encounter& e);

/// Zeroes the row and column of node `dx_index`, makes that row one-hot on itself
/// and renormalizes every other row. Throws ArgumentError if it is not a dx node.
Matrix mask_diagnosis_in_prior(const Matrix& prior, const NodeIndexing& idx,
                               Eigen::Index dx_index);

/// i.i.d. Uniform(0,1) entries, rows normalized.
Matrix random_adjacency(Eigen::Index n, Rng& rng);

/// Throws ContractError unless every row is non-negative and sums to 1 within tol.
void require_row_stochastic(const Matrix& m, const char* what, double tol = 1e-9);

}  // namespace gct::graph
