#pragma once

// JSON-lines dataset format, one encounter per line:
//   {"format_version":1,"id":7,"dx":[..],"treat":[..],"lab":[..],
//    "edges":[["v:0","d:0"],["d:0","m:0"],...],
//    "labels":{"dx_treatment":[1],"readmission":false,"mortality":true}}
// "edges" is omitted for records without known structure; every label key is
// optional.

#include "gct/encounter.hpp"

#include "json.hpp"

#include <filesystem>
#include <vector>

namespace gct {

inline constexpr int kDatasetFormatVersion = 1;

nlohmann::json encounter_to_json(const Encounter& e);
/// Throws StructuralError on malformed records.
Encounter encounter_from_json(const nlohmann::json& j);

void write_jsonl(const std::filesystem::path& path, const std::vector<Encounter>& encounters);
std::vector<Encounter> read_jsonl(const std::filesystem::path& path);

struct DatasetStats {
  std::size_t num_encounters = 0;
  double mean_dx = 0.0;
  double mean_treat = 0.0;
  double mean_lab = 0.0;
  /// Fraction of encounters carrying label 1 / label 2 (only when dx_treatment labels exist).
  std::optional<double> prevalence_label1;
  std::optional<double> prevalence_label2;
  std::optional<double> prevalence_readmission;
  std::optional<double> prevalence_mortality;
  bool has_structure = false;
  Vocab vocab;
};

DatasetStats compute_stats(const std::vector<Encounter>& encounters);
nlohmann::json stats_to_json(const DatasetStats& s);

/// "<dataset>.stats.json" next to the dataset.
std::filesystem::path stats_sidecar_path(const std::filesystem::path& dataset);

}  // namespace gct
