#pragma once

#include <cstdint>

namespace laver {

/// xoshiro256** seeded through splitmix64. Only integer arithmetic feeds the
/// stream, so a given seed yields the same sequence on every platform.
/// Gaussian draws use Box-Muller on top of uniform() and cache the second value.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform double in [0, 1) built from the top 53 bits.
  double uniform() noexcept;
  /// Uniform integer in [0, n). n must be nonzero.
  std::uint64_t uniform_int(std::uint64_t n) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }
  double normal() noexcept;

  /// Independent stream derived from this generator's seed and a tag.
  Rng derive(std::uint64_t tag) const noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace laver
