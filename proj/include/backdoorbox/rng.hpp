#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace bbox {

using Rng = std::mt19937_64;

/// Independent randomness streams. Seeds for one stream never collide with
/// another so adding draws in one place cannot shift results elsewhere.
enum class Stream : std::uint64_t {
  selection = 1,
  sample = 2,
  shuffle = 3,
  init = 4,
  shrinkpad = 5,
  cutmix = 6,
  warp = 7,
  subset = 8,
  pattern = 9,
  synthetic = 10,
  defense = 11,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, Stream stream,
                                 std::initializer_list<std::uint64_t> parts = {}) {
  std::uint64_t h = splitmix64(base ^ splitmix64(static_cast<std::uint64_t>(stream)));
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, Stream stream,
                    std::initializer_list<std::uint64_t> parts = {}) {
  return Rng(derive_seed(base, stream, parts));
}

/// Inclusive range.
inline int uniform_int(Rng &rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double uniform_real(Rng &rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Beta(a, b) via the ratio of two gamma variates.
inline double sample_beta(double a, double b, Rng &rng) {
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  if (x + y == 0.0) return 0.5;
  return x / (x + y);
}

/// Seed for non-deterministic runs.
inline std::uint64_t entropy_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

} // namespace bbox
