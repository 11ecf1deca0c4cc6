#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "bras/errors.hpp"

namespace bras {

/// splitmix64 output mixer. Used only for seed derivation, never as the
/// sampling stream.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// k-th seed split from a master seed: the k-th splitmix64 output starting
/// from state `master`. O(1), so parallel trials can derive their seeds
/// independently.
inline std::uint64_t split_seed(std::uint64_t master, std::uint64_t k) {
  return mix64(master + k * 0x9e3779b97f4a7c15ULL);
}

/// Deterministic random stream with a pinned identity (see version.hpp).
///
/// std::mt19937_64 is bit-exact across conforming standard libraries; the
/// distributions layered here avoid std::uniform_*_distribution, whose output
/// is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Rejection sampling, so no modulo bias.
  std::uint64_t bounded(std::uint64_t n) {
    if (n == 0) throw argument_error("bounded: n must be positive");
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t x = engine_();
      if (x >= threshold) return x % n;
    }
  }

  /// Standard normal via Box-Muller; generates pairs and caches the second.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] keeps the log finite.
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 6.283185307179586476925286766559 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace bras
