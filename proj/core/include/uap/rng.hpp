#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace uap {

/// 64-bit linear congruential generator shared by weight initialization and
/// dataset generation, so generated bytes are identical on every platform.
///
///   state <- state * 6364136223846793005 + 1442695040888963407  (mod 2^64)
///   uniform() = (state >> 11) * 2^-53                            in [0, 1)
///
/// The state is advanced before each draw; the initial state is the seed.
/// gaussian() uses Box-Muller on two consecutive uniforms (u1, u2):
///   sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
/// and does not cache the second variate.
class Lcg64 {
 public:
  static constexpr std::uint64_t kMultiplier = 6364136223846793005ULL;
  static constexpr std::uint64_t kIncrement = 1442695040888963407ULL;

  explicit Lcg64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ = state_ * kMultiplier + kIncrement;
    return state_;
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double gaussian() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// floor(uniform() * n), an integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace uap
