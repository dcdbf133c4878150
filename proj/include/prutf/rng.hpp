#pragma once

#include <cstdint>

#include "prutf/stats.hpp"

namespace prutf {

// Counter-based generator: output i is mix64(seed + (i+1) * GAMMA) with the SplitMix64
// finalizer (Steele, Lea, Flood 2014). Counter addressing makes streams independent of
// consumption order, so parallel replicates reproduce bit-exactly.
class CounterRng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  static std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t next_u64() { return mix64(seed_ + (++counter_) * kGamma); }

  // Uniform on the open interval (0,1): 53-bit mantissa offset by half an ulp.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53;
  }

  // Standard normal via the inverse CDF; no rejection, so the counter advance per
  // draw is fixed.
  double next_gaussian() { return normal_quantile(next_uniform()); }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace prutf
