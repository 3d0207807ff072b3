#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "lgc/common.hpp"

namespace lgc {

// Deterministic RNG wrapper. All randomness in the library flows through this
// class; independent streams are derived with child() so that adding a
// consumer in one place never shifts the draws seen by another.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  uint64_t seed() const { return seed_; }

  Rng child(uint64_t tag) const {
    return Rng(splitmix64(seed_ ^ (tag * 0x9E3779B97F4A7C15ull)));
  }

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1). 53-bit mantissa path, engine-order stable.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (no cached spare: keeps draw order
  // independent of call parity).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    // Multiply-shift bounded draw; bias is negligible for n << 2^64 and the
    // result is platform-stable, unlike std::uniform_int_distribution.
    return static_cast<uint64_t>((static_cast<__uint128_t>(engine_()) * n) >> 64);
  }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; i--) {
      uint64_t j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace lgc
