#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace exlm {

// Seeded random stream. All sampling goes through explicit instances of
// this class so that every experiment is reproducible from its seed; no
// code in the library touches global RNG state.
//
// normal() is a cacheless Box-Muller so the draw sequence depends only on
// the underlying engine, not on standard-library internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform01() < p; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Deterministically derives an independent stream seed from a base seed
  // and up to two indices (splitmix64 finalizer applied twice).
  static std::uint64_t derive(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    auto mix = [](std::uint64_t x) {
      x += 0x9e3779b97f4a7c15ULL;
      x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
      x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
      return x ^ (x >> 31);
    };
    return mix(mix(base ^ mix(a)) ^ mix(b + 0x6a09e667f3bcc909ULL));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace exlm
