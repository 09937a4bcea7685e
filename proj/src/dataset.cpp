#include "gct/dataset.hpp"

#include "gct/errors.hpp"

#include <fstream>

namespace gct {

using nlohmann::json;

json encounter_to_json(const Encounter& e) {
  json j;
  j["format_version"] = kDatasetFormatVersion;
  j["id"] = e.id;
  j["dx"] = e.dx;
  j["treat"] = e.treat;
  j["lab"] = e.lab;
  if (e.edges) {
    json edges = json::array();
    for (const Edge& edge : *e.edges)
      edges.push_back({node_ref_to_string(edge.parent), node_ref_to_string(edge.child)});
    j["edges"] = std::move(edges);
  }
  json labels = json::object();
  if (e.labels.dx_treatment) labels["dx_treatment"] = *e.labels.dx_treatment;
  if (e.labels.readmission) labels["readmission"] = *e.labels.readmission;
  if (e.labels.mortality) labels["mortality"] = *e.labels.mortality;
  j["labels"] = std::move(labels);
  return j;
}

namespace {

std::vector<int> read_codes(const json& j, const char* key) {
  if (!j.contains(key)) return {};
  std::vector<int> codes = j.at(key).get<std::vector<int>>();
  for (int c : codes)
    if (c < 0) throw StructuralError(std::string("negative code in ") + key);
  return codes;
}

void check_ref(const Encounter& e, const NodeRef& r) {
  auto bound = [&]() -> std::size_t {
    switch (r.kind) {
      case NodeKind::Visit: return 1;
      case NodeKind::Dx: return e.dx.size();
      case NodeKind::Treatment: return e.treat.size();
      case NodeKind::Lab: return e.lab.size();
    }
    return 0;
  }();
  if (static_cast<std::size_t>(r.position) >= bound)
    throw StructuralError("edge references missing node " + node_ref_to_string(r) +
                          " in encounter " + std::to_string(e.id));
}

}  // namespace

Encounter encounter_from_json(const json& j) {
  try {
    if (j.contains("format_version") && j.at("format_version").get<int>() != kDatasetFormatVersion)
      throw StructuralError("unsupported dataset format_version");
    Encounter e;
    e.id = j.at("id").get<std::int64_t>();
    e.dx = read_codes(j, "dx");
    e.treat = read_codes(j, "treat");
    e.lab = read_codes(j, "lab");
    if (j.contains("edges")) {
      std::vector<Edge> edges;
      for (const auto& pair : j.at("edges")) {
        if (!pair.is_array() || pair.size() != 2)
          throw StructuralError("edge must be a [parent, child] pair");
        Edge edge{node_ref_from_string(pair[0].get<std::string>()),
                  node_ref_from_string(pair[1].get<std::string>())};
        check_ref(e, edge.parent);
        check_ref(e, edge.child);
        edges.push_back(edge);
      }
      e.edges = std::move(edges);
    }
    if (j.contains("labels")) {
      const json& l = j.at("labels");
      if (l.contains("dx_treatment")) e.labels.dx_treatment = l.at("dx_treatment").get<std::vector<int>>();
      if (l.contains("readmission")) e.labels.readmission = l.at("readmission").get<bool>();
      if (l.contains("mortality")) e.labels.mortality = l.at("mortality").get<bool>();
    }
    return e;
  } catch (const json::exception& ex) {
    throw StructuralError(std::string("malformed encounter record: ") + ex.what());
  }
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Encounter>& encounters) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  for (const auto& e : encounters) out << encounter_to_json(e).dump() << '\n';
  if (!out) throw ConfigError("write failed: " + path.string());
}

std::vector<Encounter> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open dataset: " + path.string());
  std::vector<Encounter> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(encounter_from_json(json::parse(line)));
    } catch (const json::exception& ex) {
      throw StructuralError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    } catch (const StructuralError& ex) {
      throw StructuralError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

DatasetStats compute_stats(const std::vector<Encounter>& encounters) {
  DatasetStats s;
  s.num_encounters = encounters.size();
  s.vocab = infer_vocab(encounters);
  if (encounters.empty()) return s;
  double dx = 0, treat = 0, lab = 0;
  std::size_t n_dt = 0, l1 = 0, l2 = 0, n_re = 0, re = 0, n_mo = 0, mo = 0;
  s.has_structure = true;
  for (const auto& e : encounters) {
    dx += static_cast<double>(e.dx.size());
    treat += static_cast<double>(e.treat.size());
    lab += static_cast<double>(e.lab.size());
    s.has_structure = s.has_structure && e.has_structure();
    if (e.labels.dx_treatment) {
      ++n_dt;
      for (int l : *e.labels.dx_treatment) {
        l1 += l == 1;
        l2 += l == 2;
      }
    }
    if (e.labels.readmission) {
      ++n_re;
      re += *e.labels.readmission;
    }
    if (e.labels.mortality) {
      ++n_mo;
      mo += *e.labels.mortality;
    }
  }
  const auto n = static_cast<double>(encounters.size());
  s.mean_dx = dx / n;
  s.mean_treat = treat / n;
  s.mean_lab = lab / n;
  if (n_dt > 0) {
    s.prevalence_label1 = static_cast<double>(l1) / static_cast<double>(n_dt);
    s.prevalence_label2 = static_cast<double>(l2) / static_cast<double>(n_dt);
  }
  if (n_re > 0) s.prevalence_readmission = static_cast<double>(re) / static_cast<double>(n_re);
  if (n_mo > 0) s.prevalence_mortality = static_cast<double>(mo) / static_cast<double>(n_mo);
  return s;
}

json stats_to_json(const DatasetStats& s) {
  json j;
  j["format_version"] = kDatasetFormatVersion;
  j["num_encounters"] = s.num_encounters;
  j["mean_dx_per_visit"] = s.mean_dx;
  j["mean_treatment_per_visit"] = s.mean_treat;
  j["mean_lab_per_visit"] = s.mean_lab;
  j["has_structure"] = s.has_structure;
  j["vocab"] = {{"dx", s.vocab.num_dx}, {"treatment", s.vocab.num_treat}, {"lab", s.vocab.num_lab}};
  json prev = json::object();
  if (s.prevalence_label1) prev["dx_treatment_1"] = *s.prevalence_label1;
  if (s.prevalence_label2) prev["dx_treatment_2"] = *s.prevalence_label2;
  if (s.prevalence_readmission) prev["readmission"] = *s.prevalence_readmission;
  if (s.prevalence_mortality) prev["mortality"] = *s.prevalence_mortality;
  j["prevalence"] = std::move(prev);
  return j;
}

std::filesystem::path stats_sidecar_path(const std::filesystem::path& dataset) {
  return std::filesystem::path(dataset.string() + ".stats.json");
}

}  // namespace gct
