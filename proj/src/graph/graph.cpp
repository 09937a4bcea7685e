#include "gct/graph/graph.hpp"

#include "gct/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace gct::graph {

NodeIndexing NodeIndexing::of(const Encounter& e) {
  return {static_cast<Eigen::Index>(e.dx.size()), static_cast<Eigen::Index>(e.treat.size()),
          static_cast<Eigen::Index>(e.lab.size())};
}

Eigen::Index NodeIndexing::index(const NodeRef& ref) const {
  const Eigen::Index p = ref.position;
  auto check = [&](Eigen::Index n) {
    if (p < 0 || p >= n) throw StructuralError("node " + node_ref_to_string(ref) + " out of range");
  };
  switch (ref.kind) {
    case NodeKind::Visit: check(1); return 0;
    case NodeKind::Dx: check(num_dx); return dx_begin() + p;
    case NodeKind::Treatment: check(num_treat); return treat_begin() + p;
    case NodeKind::Lab: check(num_lab); return lab_begin() + p;
  }
  return 0;
}

NodeRef NodeIndexing::node(Eigen::Index i) const {
  if (i < 0 || i >= size()) throw ArgumentError("node index " + std::to_string(i) + " out of range");
  if (i == 0) return {NodeKind::Visit, 0};
  if (i < treat_begin()) return {NodeKind::Dx, static_cast<int>(i - dx_begin())};
  if (i < lab_begin()) return {NodeKind::Treatment, static_cast<int>(i - treat_begin())};
  return {NodeKind::Lab, static_cast<int>(i - lab_begin())};
}

std::uint64_t CondProbTables::key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

CondProbTables CondProbTables::estimate(std::span<const Encounter> encounters) {
  CondProbTables t;
  t.num_encounters_ = encounters.size();
  for (const Encounter& e : encounters) {
    const std::set<int> dx(e.dx.begin(), e.dx.end());
    const std::set<int> treat(e.treat.begin(), e.treat.end());
    const std::set<int> lab(e.lab.begin(), e.lab.end());
    for (int d : dx) ++t.n_dx_[d];
    for (int m : treat) ++t.n_treat_[m];
    for (int r : lab) ++t.n_lab_[r];
    for (int d : dx)
      for (int m : treat) ++t.n_dx_treat_[key(d, m)];
    for (int m : treat)
      for (int r : lab) ++t.n_treat_lab_[key(m, r)];
  }
  return t;
}

double CondProbTables::ratio(const std::unordered_map<std::uint64_t, std::int64_t>& joint,
                             const std::unordered_map<int, std::int64_t>& marginal, int given,
                             std::uint64_t k) {
  const auto m = marginal.find(given);
  if (m == marginal.end()) return 0.0;
  const auto j = joint.find(k);
  if (j == joint.end()) return 0.0;
  return static_cast<double>(j->second) / static_cast<double>(m->second);
}

double CondProbTables::p_treat_given_dx(int m, int d) const {
  return ratio(n_dx_treat_, n_dx_, d, key(d, m));
}
double CondProbTables::p_dx_given_treat(int d, int m) const {
  return ratio(n_dx_treat_, n_treat_, m, key(d, m));
}
double CondProbTables::p_lab_given_treat(int r, int m) const {
  return ratio(n_treat_lab_, n_treat_, m, key(m, r));
}
double CondProbTables::p_treat_given_lab(int m, int r) const {
  return ratio(n_treat_lab_, n_lab_, r, key(m, r));
}

namespace {

bool allowed(NodeKind a, NodeKind b) {
  if (a == NodeKind::Visit || b == NodeKind::Visit) return true;
  auto pair = [&](NodeKind x, NodeKind y) { return (a == x && b == y) || (a == y && b == x); };
  return pair(NodeKind::Dx, NodeKind::Treatment) || pair(NodeKind::Treatment, NodeKind::Lab);
}

void normalize_rows(Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double s = m.row(i).sum();
    if (!(s > 0.0)) throw ContractError("row " + std::to_string(i) + " has no mass");
    m.row(i) /= s;
  }
}

}  // namespace

Matrix build_mask(const Encounter& e) {
  const auto idx = NodeIndexing::of(e);
  const Eigen::Index n = idx.size();
  Matrix mask(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      mask(i, j) = (i == j || allowed(idx.kind(i), idx.kind(j))) ? 0.0 : kMaskedValue;
  return mask;
}

Matrix build_prior(const Encounter& e, const CondProbTables& tables, double green_value) {
  if (!(green_value > 0.0) || !std::isfinite(green_value))
    throw ArgumentError("green value must be positive and finite");
  const auto idx = NodeIndexing::of(e);
  const Eigen::Index n = idx.size();
  Matrix p = Matrix::Zero(n, n);
  auto code = [&](Eigen::Index i) {
    const NodeRef r = idx.node(i);
    const auto pos = static_cast<std::size_t>(r.position);
    switch (r.kind) {
      case NodeKind::Dx: return e.dx[pos];
      case NodeKind::Treatment: return e.treat[pos];
      case NodeKind::Lab: return e.lab[pos];
      case NodeKind::Visit: break;
    }
    return -1;
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    const NodeKind ki = idx.kind(i);
    for (Eigen::Index j = 0; j < n; ++j) {
      const NodeKind kj = idx.kind(j);
      if (i == j || ki == NodeKind::Visit || kj == NodeKind::Visit) {
        p(i, j) = green_value;
      } else if (ki == NodeKind::Dx && kj == NodeKind::Treatment) {
        p(i, j) = tables.p_treat_given_dx(code(j), code(i));
      } else if (ki == NodeKind::Treatment && kj == NodeKind::Dx) {
        p(i, j) = tables.p_dx_given_treat(code(j), code(i));
      } else if (ki == NodeKind::Treatment && kj == NodeKind::Lab) {
        p(i, j) = tables.p_lab_given_treat(code(j), code(i));
      } else if (ki == NodeKind::Lab && kj == NodeKind::Treatment) {
        p(i, j) = tables.p_treat_given_lab(code(j), code(i));
      }
    }
  }
  normalize_rows(p);
  return p;
}

Matrix build_true_adjacency(const Encounter& e) {
  if (!e.edges) throw StructuralError("encounter " + std::to_string(e.id) + " has no ground-truth edges");
  const auto idx = NodeIndexing::of(e);
  const Eigen::Index n = idx.size();
  Matrix a = Matrix::Identity(n, n);
  for (const Edge& edge : *e.edges) {
    const Eigen::Index i = idx.index(edge.parent);
    const Eigen::Index j = idx.index(edge.child);
    if (i == j) continue;
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  normalize_rows(a);
  return a;
}

Matrix mask_diagnosis_in_prior(const Matrix& prior, const NodeIndexing& idx, Eigen::Index dx_index) {
  if (prior.rows() != idx.size() || prior.cols() != idx.size())
    throw DimensionError("prior does not match the encounter layout");
  if (dx_index < idx.dx_begin() || dx_index >= idx.treat_begin())
    throw ArgumentError("node " + std::to_string(dx_index) + " is not a diagnosis");
  Matrix p = prior;
  p.row(dx_index).setZero();
  p.col(dx_index).setZero();
  p(dx_index, dx_index) = 1.0;
  normalize_rows(p);
  return p;
}

Matrix random_adjacency(Eigen::Index n, Rng& rng) {
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform_open();
  normalize_rows(m);
  return m;
}

void require_row_stochastic(const Matrix& m, const char* what, double tol) {
  if (m.rows() != m.cols()) throw ContractError(std::string(what) + " is not square");
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if ((m.row(i).array() < 0.0).any() || !m.row(i).allFinite())
      throw ContractError(std::string(what) + " has a negative or non-finite entry in row " +
                          std::to_string(i));
    if (std::abs(m.row(i).sum() - 1.0) > tol)
      throw ContractError(std::string(what) + " row " + std::to_string(i) + " does not sum to 1");
  }
}

}  // namespace gct::graph
