#pragma once

// Deterministic seeding: every random stream is a pure function of
// (master seed, point, trial, label).

#include <cstdint>
#include <random>

namespace ccra {

enum class Stream : std::uint64_t {
  preamble_phase = 1,
  replica_pattern,
  activity,
  preamble_choice,
  channel,
  payload,
  noise,
  capture,
  calibration,
  misc,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t point,
                                    std::uint64_t trial, Stream label) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ point);
  h = splitmix64(h ^ (trial * 0x2545f4914f6cdd1dULL));
  h = splitmix64(h ^ static_cast<std::uint64_t>(label));
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, std::uint64_t point, std::uint64_t trial,
                    Stream label) {
  return Rng(derive_seed(master, point, trial, label));
}

/// Circular complex Gaussian with E|z|^2 = var.
template <typename Gen>
std::complex<double> complex_gaussian(Gen& g, double var) {
  std::normal_distribution<double> nd(0.0, std::sqrt(var / 2.0));
  const double re = nd(g);
  const double im = nd(g);
  return {re, im};
}

}  // namespace ccra
