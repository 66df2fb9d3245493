#pragma once

// Counter-based random numbers. Draw i of stream s under seed k is
//
//   key  = splitmix64(k ^ splitmix64(s))
//   x_i  = splitmix64(key + (i + 1) * 0x9E3779B97F4A7C15)
//
// where splitmix64(z) is the SplitMix64 finalizer
//
//   z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//   z ^= z >> 27; z *= 0x94D049BB133111EB;
//   z ^= z >> 31.
//
// uniform() = (x_i >> 11) * 2^-53 in [0, 1). gaussian() consumes two draws
// (u1, u2) and returns sqrt(-2 ln(1 - u1)) * cos(2 pi u2).

#include <cmath>
#include <cstdint>
#include <numbers>

namespace plslam {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(splitmix64(seed ^ splitmix64(stream))) {}

  std::uint64_t next_u64() {
    ++counter_;
    return splitmix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double gaussian() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double gaussian(double sigma) { return sigma * gaussian(); }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Stream identifiers used by the simulator and experiment drivers.
namespace streams {
inline constexpr std::uint64_t kScene = 1;
inline constexpr std::uint64_t kPixelNoise = 2;
inline constexpr std::uint64_t kInitialization = 3;
}  // namespace streams

}  // namespace plslam
