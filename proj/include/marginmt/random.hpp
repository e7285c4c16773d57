#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <utility>

// Portable draws on top of mt19937_64. Standard distributions are
// implementation-defined, which would make golden files library-dependent.

namespace marginmt::rnd {

using Engine = std::mt19937_64;

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Engine engine(std::uint64_t seed, std::uint64_t stream = 0) { return Engine(mix(seed, stream)); }

/// Uniform in [0, 1).
inline double unit(Engine& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n).
inline std::uint64_t below(Engine& rng, std::uint64_t n) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v;
  do v = rng();
  while (v >= limit);
  return v % n;
}

/// Uniform integer in [lo, hi].
inline int between(Engine& rng, int lo, int hi) {
  return lo + static_cast<int>(below(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

inline bool bernoulli(Engine& rng, double p) { return unit(rng) < p; }

/// Standard normal via Box-Muller.
inline double normal(Engine& rng) {
  double u1 = unit(rng);
  while (u1 <= 0.0) u1 = unit(rng);
  const double u2 = unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
}

template <typename T>
void shuffle(std::span<T> items, Engine& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = below(rng, i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace marginmt::rnd
