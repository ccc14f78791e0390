#pragma once

#include <cstdint>
#include <limits>

namespace mirrorflow {

/// SplitMix64 (Steele, Lea, Flood 2014): 64-bit state, one add and a
/// xor-shift-multiply finalizer per draw. Satisfies UniformRandomBitGenerator.
///
/// Uniform and normal variates are derived here rather than through
/// <random> distributions, whose output is implementation-defined, so a seed
/// yields the same stream on every platform.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept;

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Standard normal via Box-Muller (the second variate is cached).
  double normal() noexcept;
  /// Uniformly +1 or -1.
  double sign() noexcept;

 private:
  std::uint64_t state_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

/// Derives an independent stream seed from a base seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

}  // namespace mirrorflow
