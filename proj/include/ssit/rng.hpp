#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ssit {

// Deterministic RNG used everywhere randomness is needed. All draws go
// through this wrapper so seeded runs are bit-reproducible across the
// whole pipeline.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  // [0, 1)
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // {0, ..., n-1}, n > 0
  size_t below(size_t n) {
    return static_cast<size_t>(uniform() * static_cast<double>(n)) % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller, no caching so the draw count per call is fixed.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double truncated_normal(double sigma) {
    for (;;) {
      double z = normal();
      if (std::abs(z) <= 2.0) return z * sigma;
    }
  }

  uint64_t raw() { return eng_(); }

  // splitmix64-style combiner for deriving per-sample seeds.
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t x = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace ssit
