#pragma once

// Counter-based random streams. Every draw is a pure function of
// (seed, stream, counter), so results do not depend on call order or on how
// work is split across threads.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "rnnt/tensor.hpp"

namespace rnnt {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Keyed stream of 64-bit values: draw i is splitmix64 over the mixed key and i.
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream = 0)
      : key_(splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ substream)) {}

  constexpr std::uint64_t at(std::uint64_t counter) const {
    return splitmix64(key_ ^ splitmix64(counter));
  }
  std::uint64_t next() { return at(counter_++); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] (inclusive). Modulo bias is below 2^-40 for
  /// the small ranges used here.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    return lo + next() % (hi - lo + 1);
  }

  /// Standard normal via Box-Muller; consumes two draws.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Stable 64-bit FNV-1a hash, used to derive per-parameter streams from names.
inline constexpr std::uint64_t hash_name(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, CounterRng rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.data) v = rng.uniform(-limit, limit);
}

}  // namespace rnnt
