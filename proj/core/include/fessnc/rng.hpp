#pragma once

#include <cstdint>
#include <random>

namespace fessnc {

using Rng = std::mt19937_64;

// splitmix64 step; used to derive independent substreams from (seed, index)
// pairs so parallel work stays deterministic regardless of scheduling.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline Rng substream(std::uint64_t seed, std::uint64_t index) {
  return Rng(splitmix64(seed ^ splitmix64(index)));
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline double rademacher(Rng& rng) {
  return (rng() & 1ULL) ? 1.0 : -1.0;
}

}  // namespace fessnc
