#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bras/errors.hpp"
#include "bras/rng.hpp"

namespace bras {

/// Batch-size schedule B(r) for iteration counter r >= 1.
struct BatchSchedule {
  enum class Kind { fixed, growing };

  Kind kind = Kind::fixed;
  std::int64_t base = 1;          // B0
  double epsilon_growth = 0.0;    // growing only

  static BatchSchedule fixed(std::int64_t b0) {
    if (b0 < 1) throw argument_error("batch size must be at least 1");
    return {Kind::fixed, b0, 0.0};
  }

  /// Growing schedule B(r) = ceil(B0 * r^(1+eps)), capped at J_n.
  static BatchSchedule growing(std::int64_t b0, double eps) {
    if (b0 < 1) throw argument_error("batch size must be at least 1");
    if (!(eps > 0.0)) throw argument_error("growth epsilon must be positive");
    return {Kind::growing, b0, eps};
  }

  /// Batch size at iteration r for a mode with J fibers.
  [[nodiscard]] std::int64_t size_at(std::int64_t r, std::int64_t J) const {
    if (r < 1) throw argument_error("iteration counter starts at 1");
    if (kind == Kind::fixed) return base;
    const double raw = static_cast<double>(base) *
                       std::pow(static_cast<double>(r), 1.0 + epsilon_growth);
    const double capped = std::min(raw, static_cast<double>(J));
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(capped)));
  }
};

/// Seeded source of the per-iteration randomness: which mode to update and
/// which fiber batch to use. Identical (seed, call sequence) pairs give
/// identical draws; see version.hpp for the pinned generator identity.
/// Single-owner: parallel experiments use independently seeded states.
class SamplerState {
 public:
  /// `mode_weights` defaults to uniform over the N modes; a supplied vector
  /// must have one positive entry per mode and is normalized to sum to 1.
  SamplerState(std::uint64_t seed, int num_modes, std::vector<double> mode_weights = {})
      : seed_(seed), rng_(seed), num_modes_(num_modes) {
    if (num_modes < 1) throw argument_error("need at least one mode");
    if (mode_weights.empty()) {
      weights_.assign(static_cast<std::size_t>(num_modes), 1.0 / num_modes);
    } else {
      if (static_cast<int>(mode_weights.size()) != num_modes)
        throw dimension_error("expected " + std::to_string(num_modes) +
                              " mode weights, got " + std::to_string(mode_weights.size()));
      double total = 0.0;
      for (double w : mode_weights) {
        if (!(w > 0.0)) throw argument_error("mode weights must be positive");
        total += w;
      }
      weights_ = std::move(mode_weights);
      for (double& w : weights_) w /= total;
    }
  }

  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] int num_modes() const { return num_modes_; }
  [[nodiscard]] const std::vector<double>& mode_weights() const { return weights_; }

  /// Draws a mode n in 1..N with probability mode_weights[n].
  int sample_mode() {
    const double u = rng_.uniform01();
    double acc = 0.0;
    for (int n = 0; n < num_modes_; ++n) {
      acc += weights_[static_cast<std::size_t>(n)];
      if (u < acc) return n + 1;
    }
    return num_modes_;  // guards accumulated rounding
  }

  /// Uniformly random B-subset of {1..J}, without replacement, returned in
  /// ascending order. Dense draws (B/J > 1/16) use a partial Fisher-Yates
  /// shuffle; sparse draws use rejection sampling, keeping O(B) memory for
  /// huge J.
  std::vector<std::int64_t> sample_fibers(int mode, std::int64_t J, std::int64_t B) {
    if (mode < 1 || mode > num_modes_)
      throw index_error("mode " + std::to_string(mode) + " out of range 1.." +
                        std::to_string(num_modes_));
    if (J < 1) throw argument_error("fiber count must be positive");
    if (B < 1) throw argument_error("batch must be >= 1");
    if (B > J)
      throw argument_error("batch size " + std::to_string(B) + " exceeds fiber count " +
                           std::to_string(J));

    std::vector<std::int64_t> out;
    out.reserve(static_cast<std::size_t>(B));
    if (16 * B > J) {
      std::vector<std::int64_t> pool(static_cast<std::size_t>(J));
      std::iota(pool.begin(), pool.end(), std::int64_t{1});
      for (std::int64_t i = 0; i < B; ++i) {
        const std::int64_t k =
            i + static_cast<std::int64_t>(rng_.bounded(static_cast<std::uint64_t>(J - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(k)]);
        out.push_back(pool[static_cast<std::size_t>(i)]);
      }
    } else {
      std::unordered_set<std::int64_t> seen;
      seen.reserve(static_cast<std::size_t>(2 * B));
      while (static_cast<std::int64_t>(out.size()) < B) {
        const std::int64_t j =
            static_cast<std::int64_t>(rng_.bounded(static_cast<std::uint64_t>(J))) + 1;
        if (seen.insert(j).second) out.push_back(j);
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Direct access for components that need auxiliary draws (initialization,
  /// noise) from the same stream.
  Rng& rng() { return rng_; }

 private:
  std::uint64_t seed_;
  Rng rng_;
  int num_modes_;
  std::vector<double> weights_;
};

}  // namespace bras
