#pragma once

#include <cstdint>

namespace sgp {

// splitmix64 finalizer; used as a counter-based generator so that the n-th
// draw of a stream depends only on (seed, n).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Uniform double in [0, 1) for draw `counter` of stream `seed`.
constexpr double counter_uniform(std::uint64_t seed, std::uint64_t counter) noexcept {
  const std::uint64_t bits = mix64(mix64(seed) ^ counter);
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Derive an independent child seed, e.g. per episode or per layer.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
  return mix64(seed ^ mix64(salt + 0x632be59bd9b4e019ULL));
}

}  // namespace sgp

namespace sgp {

/// Sequential view over a counter-based stream.
struct CounterRng {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  double uniform() { return counter_uniform(seed, counter++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const auto v = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    return v < n ? v : n - 1;
  }
};

}  // namespace sgp
