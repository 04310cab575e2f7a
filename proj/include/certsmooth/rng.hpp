#pragma once

// Seed derivation shared by every stochastic stage. A derived seed depends
// only on the root seed and the path of integer tags leading to it, never on
// scheduling, so serial and parallel runs draw identical noise.

#include <Eigen/Core>

#include <cstdint>
#include <random>

namespace certsmooth {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// mix64(seed, a, b, ...) = mix64(... mix64(mix64(seed) ^ a) ^ b ...).
template <typename... Tags>
constexpr std::uint64_t mix64(std::uint64_t seed, std::uint64_t tag,
                              Tags... rest) noexcept {
  const std::uint64_t h = mix64(mix64(seed) ^ tag);
  if constexpr (sizeof...(rest) == 0) {
    return h;
  } else {
    return mix64(h, static_cast<std::uint64_t>(rest)...);
  }
}

using Rng = std::mt19937_64;

/// Fills `out` with i.i.d. N(0, stddev^2) draws in storage order.
template <typename Derived>
void fill_gaussian(Eigen::DenseBase<Derived>& out, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out.derived().data()[i] =
        static_cast<typename Derived::Scalar>(stddev * normal(rng));
  }
}

}  // namespace certsmooth
