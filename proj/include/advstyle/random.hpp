#pragma once

// Deterministic RNG streams. mt19937_64 supplies the raw bits; all
// distributions are hand-mapped from those bits so that draws are identical
// across standard library implementations (std::normal_distribution et al.
// are not pinned by the standard).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "advstyle/common.hpp"

namespace advstyle {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives an independent child seed from (seed, tag); used to give data
// shuffling, noise sampling, and weight init their own streams.
inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
  return splitmix64(seed ^ fnv1a64(tag));
}

class RngStream {
public:
  explicit RngStream(std::uint64_t seed) : eng_(splitmix64(seed)) {}

  std::uint64_t bits() { return eng_(); }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n).
  std::size_t uniform_int(std::size_t n) {
    if (n == 0) throw ValueError("uniform_int: n must be positive");
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
  }

  // Box-Muller; draws two uniforms per call, no cached state.
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Marsaglia-Tsang for shape >= 1; boosted by the U^{1/a} trick below 1.
  double gamma(double alpha) {
    if (alpha <= 0.0) throw ValueError("gamma: alpha must be positive");
    if (alpha < 1.0) {
      double u = uniform01();
      while (u <= 0.0) u = uniform01();
      return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform01();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = uniform_int(i);
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

private:
  std::mt19937_64 eng_;
};

}  // namespace advstyle
