#pragma once

#include <cstdint>
#include <string_view>

namespace gct {

/// Counter-based 64-bit generator (SplitMix64 output function over a keyed
/// counter). Streams are derived from (seed, purpose tag, index) so independent
/// consumers never share state and results do not depend on call interleaving.
class Rng {
 public:
  explicit Rng(std::uint64_t key = 0) : key_(key) {}

  /// Stream for a (seed, tag, index) triple.
  static Rng derive(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);
  static std::uint64_t mix(std::uint64_t x);
  static std::uint64_t hash_tag(std::string_view tag);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform in (0, 1).
  double uniform_open();
  double normal(double mean, double stddev);
  /// Unbiased integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Pareto (Lomax) draw: U^(-1/shape) - 1.
  double pareto(double shape);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace gct
