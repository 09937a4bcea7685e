#include "gct/synthgen/synthgen.hpp"

#include "gct/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace gct::synth {

namespace {

constexpr std::size_t kLabCacheLimit = std::size_t{1} << 23;  // doubles (64 MiB)

double clip_probability(double x) {
  return std::clamp(x, 0.0, std::nextafter(1.0, 0.0));
}

std::size_t idx(int row, int col, int cols) {
  return static_cast<std::size_t>(row) * static_cast<std::size_t>(cols) +
         static_cast<std::size_t>(col);
}

int sample_cdf(std::span<const double> cdf, Rng& rng) {
  const double u = rng.uniform() * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) --it;
  return static_cast<int>(it - cdf.begin());
}

void fill_cdf(std::span<const double> p, std::span<double> cdf) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    s += p[i];
    cdf[i] = s;
  }
}

/// Sets row[i] = value and rescales the remaining entries to 1 - value.
void override_entry(std::span<double> row, int i, double value, const char* what) {
  const auto k = static_cast<std::size_t>(i);
  if (row[k] == value) return;
  if (value < 0.0 || value > 1.0)
    throw ConfigError(std::string(what) + ": override outside [0, 1]");
  double rest = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j)
    if (j != k) rest += row[j];
  if (value < 1.0 && rest <= 0.0)
    throw ConfigError(std::string(what) + ": no remaining mass to renormalize");
  const double factor = rest > 0.0 ? (1.0 - value) / rest : 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) row[j] = j == k ? value : row[j] * factor;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (num_dx < 1 || num_treat < 1 || num_lab < 1)
    throw ConfigError("vocabulary sizes must be >= 1");
  if (!(pareto_marginal > 0.0) || !(pareto_conditional > 0.0))
    throw ConfigError("Pareto shapes must be positive");
  if (a_std < 0.0 || b_std < 0.0 || c_std < 0.0)
    throw ConfigError("standard deviations must be non-negative");
  if (outer_continue < 0.0 || outer_continue >= 1.0)
    throw ConfigError("outer_continue must lie in [0, 1)");
  if (min_codes < 0 || max_codes < 1 || min_codes > max_codes)
    throw ConfigError("need 0 <= min_codes <= max_codes");
  if (num_encounters == 0) throw ConfigError("num_encounters must be positive");
}

#define GCT_SYNTH_FIELDS(X)                                                                  \
  X(num_dx) X(num_treat) X(num_lab) X(pareto_marginal) X(pareto_conditional) X(a_mean)     \
  X(a_std) X(b_mean) X(b_std) X(c_mean) X(c_std) X(outer_continue) X(num_encounters)       \
  X(min_codes) X(max_codes) X(seed)

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("generator config must be a JSON object");
  SyntheticConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "format_version") continue;
      bool known = false;
#define X(f)                \
  if (key == #f) {          \
    value.get_to(c.f);      \
    known = true;           \
  }
      GCT_SYNTH_FIELDS(X)
#undef X
      if (!known) throw ConfigError("unknown generator config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad generator config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const SyntheticConfig& c) {
  nlohmann::json j;
#define X(f) j[#f] = c.f;
  GCT_SYNTH_FIELDS(X)
#undef X
  return j;
}

#undef GCT_SYNTH_FIELDS

void DxTreatmentLabelSpec::validate() const {
  for (double v : {p_d1, a_d1, p_d2_given_d1, b_d1, b_d2, p_m1_given_d1, p_m1_given_d2})
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("label override outside [0, 1]");
  if (d1 == d2) throw ConfigError("d1 and d2 must differ");
}

double DxTreatmentLabelSpec::expected_d1_m1_rate() const { return p_d1 * b_d1 * p_m1_given_d1; }

double DxTreatmentLabelSpec::expected_d2_m1_rate() const {
  return p_d1 * a_d1 * p_d2_given_d1 * b_d2 * p_m1_given_d2;
}

std::vector<double> permuted_pareto_distribution(int n, double shape, Rng& rng) {
  std::vector<double> p(static_cast<std::size_t>(n));
  double s = 0.0;
  for (double& x : p) {
    x = rng.pareto(shape);
    s += x;
  }
  if (s > 0.0) {
    for (double& x : p) x /= s;
  } else {
    std::fill(p.begin(), p.end(), 1.0 / n);
  }
  for (std::size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

GroundTruthTables GroundTruthTables::build(const SyntheticConfig& config) {
  config.validate();
  GroundTruthTables t;
  t.num_dx_ = config.num_dx;
  t.num_treat_ = config.num_treat;
  t.num_lab_ = config.num_lab;
  t.seed_ = config.seed;
  t.pareto_conditional_ = config.pareto_conditional;
  const auto nd = static_cast<std::size_t>(config.num_dx);
  const auto nm = static_cast<std::size_t>(config.num_treat);

  {
    Rng rng = Rng::derive(config.seed, "p(D)");
    t.p_dx_ = permuted_pareto_distribution(config.num_dx, config.pareto_marginal, rng);
    t.cdf_dx_.resize(nd);
    fill_cdf(t.p_dx_, t.cdf_dx_);
  }
  t.p_dx_dx_.resize(nd * nd);
  t.cdf_dx_dx_.resize(nd * nd);
  t.p_treat_dx_.resize(nd * nm);
  t.cdf_treat_dx_.resize(nd * nm);
  for (std::size_t d = 0; d < nd; ++d) {
    Rng rdd = Rng::derive(config.seed, "p(D|d)", d);
    auto row = permuted_pareto_distribution(config.num_dx, config.pareto_conditional, rdd);
    std::copy(row.begin(), row.end(), t.p_dx_dx_.begin() + static_cast<std::ptrdiff_t>(d * nd));
    t.rebuild_cdf(t.cdf_dx_dx_, std::span<const double>(t.p_dx_dx_).subspan(d * nd, nd), d * nd);

    Rng rmd = Rng::derive(config.seed, "p(M|d)", d);
    row = permuted_pareto_distribution(config.num_treat, config.pareto_conditional, rmd);
    std::copy(row.begin(), row.end(),
              t.p_treat_dx_.begin() + static_cast<std::ptrdiff_t>(d * nm));
    t.rebuild_cdf(t.cdf_treat_dx_, std::span<const double>(t.p_treat_dx_).subspan(d * nm, nm),
                  d * nm);
  }
  {
    Rng ra = Rng::derive(config.seed, "a(D)");
    Rng rb = Rng::derive(config.seed, "b(D)");
    t.a_.resize(nd);
    t.b_.resize(nd);
    for (std::size_t d = 0; d < nd; ++d) {
      t.a_[d] = clip_probability(ra.normal(config.a_mean, config.a_std));
      t.b_[d] = clip_probability(rb.normal(config.b_mean, config.b_std));
    }
    Rng rc = Rng::derive(config.seed, "c(M,D)");
    t.c_.resize(nm * nd);
    for (double& c : t.c_) c = clip_probability(rc.normal(config.c_mean, config.c_std));
  }
  return t;
}

void GroundTruthTables::rebuild_cdf(std::vector<double>& cdf, std::span<const double> p,
                                    std::size_t offset) {
  fill_cdf(p, std::span<double>(cdf).subspan(offset, p.size()));
}

std::span<const double> GroundTruthTables::p_dx_given_dx(int d) const {
  const auto n = static_cast<std::size_t>(num_dx_);
  return std::span<const double>(p_dx_dx_).subspan(static_cast<std::size_t>(d) * n, n);
}

std::span<const double> GroundTruthTables::p_treat_given_dx(int d) const {
  const auto n = static_cast<std::size_t>(num_treat_);
  return std::span<const double>(p_treat_dx_).subspan(static_cast<std::size_t>(d) * n, n);
}

double GroundTruthTables::c(int m, int d) const { return c_[idx(m, d, num_dx_)]; }

std::vector<double> GroundTruthTables::p_lab_given(int m, int d) const {
  Rng rng = Rng::derive(seed_, "p(R|m,d)", idx(m, d, num_dx_));
  return permuted_pareto_distribution(num_lab_, pareto_conditional_, rng);
}

const std::vector<double>& GroundTruthTables::lab_cdf(int m, int d) const {
  const std::uint64_t key = idx(m, d, num_dx_);
  if (auto it = lab_cache_.find(key); it != lab_cache_.end()) return it->second;
  if (lab_cache_doubles_ + static_cast<std::size_t>(num_lab_) > kLabCacheLimit) {
    lab_cache_.clear();
    lab_cache_doubles_ = 0;
  }
  std::vector<double> p = p_lab_given(m, d);
  std::vector<double> cdf(p.size());
  fill_cdf(p, cdf);
  lab_cache_doubles_ += cdf.size();
  return lab_cache_.emplace(key, std::move(cdf)).first->second;
}

int GroundTruthTables::sample_dx(Rng& rng) const { return sample_cdf(cdf_dx_, rng); }

int GroundTruthTables::sample_dx_given_dx(int d, Rng& rng) const {
  const auto n = static_cast<std::size_t>(num_dx_);
  return sample_cdf(std::span<const double>(cdf_dx_dx_).subspan(static_cast<std::size_t>(d) * n, n),
                    rng);
}

int GroundTruthTables::sample_treat(int d, Rng& rng) const {
  const auto n = static_cast<std::size_t>(num_treat_);
  return sample_cdf(
      std::span<const double>(cdf_treat_dx_).subspan(static_cast<std::size_t>(d) * n, n), rng);
}

int GroundTruthTables::sample_lab(int m, int d, Rng& rng) const {
  return sample_cdf(lab_cdf(m, d), rng);
}

void GroundTruthTables::inject_dx_treatment_labels(const DxTreatmentLabelSpec& spec) {
  spec.validate();
  if (spec.d1 < 0 || spec.d1 >= num_dx_ || spec.d2 < 0 || spec.d2 >= num_dx_)
    throw ConfigError("label diagnosis codes outside the diagnosis vocabulary");
  if (spec.m1 < 0 || spec.m1 >= num_treat_)
    throw ConfigError("label treatment code outside the treatment vocabulary");
  const auto nd = static_cast<std::size_t>(num_dx_);
  const auto nm = static_cast<std::size_t>(num_treat_);
  const auto d1 = static_cast<std::size_t>(spec.d1);
  const auto d2 = static_cast<std::size_t>(spec.d2);

  override_entry(p_dx_, spec.d1, spec.p_d1, "p(d1)");
  fill_cdf(p_dx_, cdf_dx_);

  std::span<double> dd_row = std::span<double>(p_dx_dx_).subspan(d1 * nd, nd);
  override_entry(dd_row, spec.d2, spec.p_d2_given_d1, "p(d2|d1)");
  rebuild_cdf(cdf_dx_dx_, dd_row, d1 * nd);

  for (auto [d, value] : {std::pair{d1, spec.p_m1_given_d1}, std::pair{d2, spec.p_m1_given_d2}}) {
    std::span<double> row = std::span<double>(p_treat_dx_).subspan(d * nm, nm);
    override_entry(row, spec.m1, value, "p(m1|d)");
    rebuild_cdf(cdf_treat_dx_, row, d * nm);
  }
  a_[d1] = clip_probability(spec.a_d1);
  b_[d1] = clip_probability(spec.b_d1);
  b_[d2] = clip_probability(spec.b_d2);
}

bool operator==(const GroundTruthTables& x, const GroundTruthTables& y) {
  return x.num_dx_ == y.num_dx_ && x.num_treat_ == y.num_treat_ && x.num_lab_ == y.num_lab_ &&
         x.seed_ == y.seed_ && x.p_dx_ == y.p_dx_ && x.p_dx_dx_ == y.p_dx_dx_ &&
         x.p_treat_dx_ == y.p_treat_dx_ && x.a_ == y.a_ && x.b_ == y.b_ && x.c_ == y.c_;
}

Encounter sample_encounter(const GroundTruthTables& tables, const SyntheticConfig& config,
                           Rng& rng) {
  Encounter e;
  std::vector<Edge> edges;
  const auto over = [&](const std::vector<int>& codes) {
    return static_cast<int>(codes.size()) > config.max_codes;
  };
  const auto finish = [&]() {
    e.edges = std::move(edges);
    return e;
  };

  do {
    const int first = tables.sample_dx(rng);
    e.dx.push_back(first);
    int previous = first;
    while (rng.uniform() < tables.a(first)) {
      previous = tables.sample_dx_given_dx(previous, rng);
      e.dx.push_back(previous);
      if (over(e.dx)) return finish();
    }
    if (over(e.dx)) return finish();
  } while (rng.uniform() < config.outer_continue);

  for (std::size_t i = 0; i < e.dx.size(); ++i) {
    const int d = e.dx[i];
    const NodeRef dx_node{NodeKind::Dx, static_cast<int>(i)};
    edges.push_back({NodeRef{NodeKind::Visit, 0}, dx_node});
    do {
      const int m = tables.sample_treat(d, rng);
      const NodeRef treat_node{NodeKind::Treatment, static_cast<int>(e.treat.size())};
      e.treat.push_back(m);
      edges.push_back({dx_node, treat_node});
      if (over(e.treat)) return finish();
      while (rng.uniform() < tables.c(m, d)) {
        const NodeRef lab_node{NodeKind::Lab, static_cast<int>(e.lab.size())};
        e.lab.push_back(tables.sample_lab(m, d, rng));
        edges.push_back({treat_node, lab_node});
        if (over(e.lab)) return finish();
      }
    } while (rng.uniform() < tables.b(d));
  }
  return finish();
}

bool passes_filter(const Encounter& e, const SyntheticConfig& config) {
  const auto n_dx = static_cast<int>(e.dx.size());
  const auto n_treat = static_cast<int>(e.treat.size());
  const auto n_lab = static_cast<int>(e.lab.size());
  return n_dx >= config.min_codes && n_treat >= config.min_codes && n_dx <= config.max_codes &&
         n_treat <= config.max_codes && n_lab <= config.max_codes;
}

std::vector<Encounter> filter_encounters(std::vector<Encounter> encounters,
                                         const SyntheticConfig& config) {
  std::erase_if(encounters, [&](const Encounter& e) { return !passes_filter(e, config); });
  return encounters;
}

std::vector<int> assign_labels(const Encounter& e, const DxTreatmentLabelSpec& spec) {
  bool one = false, two = false;
  if (e.edges) {
    for (const Edge& edge : *e.edges) {
      if (edge.parent.kind != NodeKind::Dx || edge.child.kind != NodeKind::Treatment) continue;
      const int d = e.dx[static_cast<std::size_t>(edge.parent.position)];
      const int m = e.treat[static_cast<std::size_t>(edge.child.position)];
      if (m != spec.m1) continue;
      one = one || d == spec.d1;
      two = two || d == spec.d2;
    }
  }
  std::vector<int> labels;
  if (one) labels.push_back(1);
  if (two) labels.push_back(2);
  return labels;
}

std::vector<Encounter> generate_dataset(const SyntheticConfig& config,
                                        const std::optional<DxTreatmentLabelSpec>& labels) {
  config.validate();
  GroundTruthTables tables = GroundTruthTables::build(config);
  if (labels) tables.inject_dx_treatment_labels(*labels);

  std::vector<Encounter> out;
  out.reserve(config.num_encounters);
  const std::uint64_t max_attempts = 1000 * static_cast<std::uint64_t>(config.num_encounters) + 1000;
  for (std::uint64_t i = 0; out.size() < config.num_encounters; ++i) {
    if (i >= max_attempts)
      throw ConfigError("filter rejects nearly every record; relax min_codes/max_codes");
    Rng rng = Rng::derive(config.seed, "encounter", i);
    Encounter e = sample_encounter(tables, config, rng);
    if (!passes_filter(e, config)) continue;
    e.id = static_cast<std::int64_t>(out.size());
    if (labels) e.labels.dx_treatment = assign_labels(e, *labels);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace gct::synth
