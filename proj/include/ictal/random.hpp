#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

// Portable draws on top of std::mt19937_64. The <random> distributions are
// implementation-defined, which would make seeded outputs differ between
// standard libraries.
namespace ictal::rnd {

using Engine = std::mt19937_64;

inline double uniform01(Engine& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

inline double uniform(Engine& g, double lo, double hi) { return lo + (hi - lo) * uniform01(g); }

// Unbiased integer in [0, n) by rejection.
inline std::uint64_t index(Engine& g, std::uint64_t n) {
  const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
  std::uint64_t v;
  do v = g();
  while (v >= limit);
  return v % n;
}

inline double normal(Engine& g) {
  double u1;
  do u1 = uniform01(g);
  while (u1 <= 0.0);
  const double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <class T>
void shuffle(std::vector<T>& v, Engine& g) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(index(g, i));
    std::swap(v[i - 1], v[j]);
  }
}

// Independent stream for a (seed, stream id) pair.
inline Engine substream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Engine(seq);
}

}  // namespace ictal::rnd
