#pragma once

// Synthetic encounter records with known visit -> diagnosis -> treatment -> lab
// structure. Code distributions are permuted, normalized Pareto draws; the number
// of codes at each level is driven by per-code continuation Bernoullis.

#include "gct/encounter.hpp"
#include "gct/rng.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

namespace gct::synth {

struct SyntheticConfig {
  int num_dx = 1000;
  int num_treat = 1000;
  int num_lab = 1000;
  double pareto_marginal = 2.0;     // shape for p(D)
  double pareto_conditional = 1.5;  // shape for p(D|d), p(M|d), p(R|m,d)
  double a_mean = 0.5, a_std = 0.1;   // dx chain continuation a(D)
  double b_mean = 0.5, b_std = 0.25;  // treatment continuation b(D)
  double c_mean = 0.5, c_std = 0.25;  // lab continuation c(M,D)
  /// Probability of starting another independent diagnosis chain.
  double outer_continue = 0.5;
  /// Encounters to emit after filtering.
  std::size_t num_encounters = 5000;
  int min_codes = 5;
  int max_codes = 50;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
};

/// Keys mirror the field names; missing keys keep their defaults. Throws ConfigError
/// on unknown keys or invalid values.
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticConfig& c);

/// Overrides that plant two diagnosis-treatment connections of similar prevalence.
struct DxTreatmentLabelSpec {
  int d1 = 0;
  int d2 = 1;
  int m1 = 0;
  double p_d1 = 0.33;
  double a_d1 = 0.8;
  double p_d2_given_d1 = 0.33;
  double b_d1 = 0.5;
  double b_d2 = 0.5;
  double p_m1_given_d1 = 0.2;
  double p_m1_given_d2 = 0.8;

  void validate() const;
  /// p(d1) b(d1) p(m1|d1): first-order chance of a d1->m1 connection.
  double expected_d1_m1_rate() const;
  /// p(d1) a(d1) p(d2|d1) b(d2) p(m1|d2): first-order chance of a d2->m1 connection.
  double expected_d2_m1_rate() const;
};

/// Ground-truth distributions and stopping probabilities. p(R|m,d) rows are
/// regenerated on demand from their own key, so values do not depend on access
/// order. Not safe for concurrent use (lab rows are cached).
class GroundTruthTables {
 public:
  static GroundTruthTables build(const SyntheticConfig& config);

  int num_dx() const { return num_dx_; }
  int num_treat() const { return num_treat_; }
  int num_lab() const { return num_lab_; }

  std::span<const double> p_dx() const { return p_dx_; }
  std::span<const double> p_dx_given_dx(int d) const;
  std::span<const double> p_treat_given_dx(int d) const;
  std::vector<double> p_lab_given(int m, int d) const;
  double a(int d) const { return a_[static_cast<std::size_t>(d)]; }
  double b(int d) const { return b_[static_cast<std::size_t>(d)]; }
  double c(int m, int d) const;

  int sample_dx(Rng& rng) const;
  int sample_dx_given_dx(int d, Rng& rng) const;
  int sample_treat(int d, Rng& rng) const;
  int sample_lab(int m, int d, Rng& rng) const;

  /// Applies the label overrides, rescaling the rest of each touched row so it
  /// still sums to 1. Throws ConfigError on out-of-vocab codes or impossible mass.
  void inject_dx_treatment_labels(const DxTreatmentLabelSpec& spec);

  friend bool operator==(const GroundTruthTables& x, const GroundTruthTables& y);

 private:
  void rebuild_cdf(std::vector<double>& cdf, std::span<const double> p, std::size_t offset);
  const std::vector<double>& lab_cdf(int m, int d) const;

  int num_dx_ = 0, num_treat_ = 0, num_lab_ = 0;
  std::uint64_t seed_ = 0;
  double pareto_conditional_ = 1.5;
  std::vector<double> p_dx_, cdf_dx_;
  std::vector<double> p_dx_dx_, cdf_dx_dx_;        // num_dx x num_dx
  std::vector<double> p_treat_dx_, cdf_treat_dx_;  // num_dx x num_treat
  std::vector<double> a_, b_;
  std::vector<double> c_;  // num_treat x num_dx
  mutable std::unordered_map<std::uint64_t, std::vector<double>> lab_cache_;
  mutable std::size_t lab_cache_doubles_ = 0;
};

/// Normalized Pareto draws in random order (length n).
std::vector<double> permuted_pareto_distribution(int n, double shape, Rng& rng);

/// One record. The dx chain draws each further diagnosis from p(D|previous) while
/// u < a(first); independent chains repeat while u < outer_continue; each dx gets
/// one treatment plus more while u < b(d); each treatment gets labs while
/// u < c(m, d). Sampling stops early once any kind exceeds config.max_codes, since
/// such records never survive filtering.
Encounter sample_encounter(const GroundTruthTables& tables, const SyntheticConfig& config,
                           Rng& rng);

/// Keeps records with >= min dx and treatments and <= max codes of every kind.
std::vector<Encounter> filter_encounters(std::vector<Encounter> encounters,
                                         const SyntheticConfig& config);
bool passes_filter(const Encounter& e, const SyntheticConfig& config);

/// {1} for a d1->m1 edge, {2} for a d2->m1 edge, both, or neither.
std::vector<int> assign_labels(const Encounter& e, const DxTreatmentLabelSpec& spec);

/// Samples, filters and (optionally) labels until config.num_encounters records
/// are kept. Record i is drawn from stream (seed, "encounter", i); kept records
/// get consecutive ids.
std::vector<Encounter> generate_dataset(const SyntheticConfig& config,
                                        const std::optional<DxTreatmentLabelSpec>& labels);

}  // namespace gct::synth
