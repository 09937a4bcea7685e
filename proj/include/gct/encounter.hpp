#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gct {

enum class NodeKind : std::uint8_t { Visit, Dx, Treatment, Lab };

/// A node inside one encounter: its kind and its position within that kind's block.
/// The visit placeholder is {Visit, 0}.
struct NodeRef {
  NodeKind kind = NodeKind::Visit;
  int position = 0;

  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

struct Edge {
  NodeRef parent;
  NodeRef child;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Task payloads an encounter may carry.
struct EncounterLabels {
  /// Subset of {1, 2}: which diagnosis-treatment connections are present.
  std::optional<std::vector<int>> dx_treatment;
  std::optional<bool> readmission;
  std::optional<bool> mortality;

  friend bool operator==(const EncounterLabels&, const EncounterLabels&) = default;
};

/// One visit. Code lists may repeat a code; every occurrence is its own node.
struct Encounter {
  std::int64_t id = 0;
  std::vector<int> dx;
  std::vector<int> treat;
  std::vector<int> lab;
  /// Ground-truth structure (visit->dx, dx->treatment, treatment->lab). Absent for
  /// ingested real-world records.
  std::optional<std::vector<Edge>> edges;
  EncounterLabels labels;

  std::size_t num_nodes() const { return 1 + dx.size() + treat.size() + lab.size(); }
  bool has_structure() const { return edges.has_value(); }

  friend bool operator==(const Encounter&, const Encounter&) = default;
};

/// Vocabulary sizes per code kind.
struct Vocab {
  int num_dx = 0;
  int num_treat = 0;
  int num_lab = 0;

  friend bool operator==(const Vocab&, const Vocab&) = default;
};

/// Smallest vocabulary covering every code in the dataset.
Vocab infer_vocab(const std::vector<Encounter>& encounters);

char kind_letter(NodeKind k);
std::string node_ref_to_string(const NodeRef& ref);
/// Parses "v:0", "d:3", "m:1", "r:7".
NodeRef node_ref_from_string(const std::string& s);

}  // namespace gct
