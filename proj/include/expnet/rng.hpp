#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace expnet {

// Stream format 1. All sampling transforms are pinned here because the
// std::*_distribution algorithms are implementation-defined; mt19937_64
// itself is bit-exact across platforms.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Named, order-sensitive seed derivation: every sub-experiment (component,
// restart, fold, ...) gets an independent reproducible stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  return splitmix64(base ^ fnv1a64(tag));
}

template <typename... Ix>
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, Ix... indices) {
  std::uint64_t h = derive_seed(base, tag);
  ((h = splitmix64(h ^ static_cast<std::uint64_t>(indices))), ...);
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Strictly inside (0,1): 53-bit mantissa, offset by half an ulp.
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Box-Muller, no caching: one normal per two uniforms.
  double normal() {
    const double r = std::sqrt(-2.0 * std::log(uniform01()));
    const double t = 2.0 * M_PI * uniform01();
    return r * std::cos(t);
  }

  // Marsaglia-Tsang; shape < 1 boosted through Gamma(shape+1) * U^(1/shape).
  double gamma(double shape) {
    if (shape < 1.0) {
      const double g = gamma(shape + 1.0);
      return g * std::pow(uniform01(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      const double v = t * t * t;
      const double u = uniform01();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  // Knuth's product method, chunked so exp(-mean) never underflows.
  long long poisson(double mean) {
    long long total = 0;
    while (mean > 30.0) {
      total += poisson_knuth(30.0);
      mean -= 30.0;
    }
    return total + poisson_knuth(mean);
  }

  void dirichlet(double alpha, std::span<double> out) {
    double sum = 0.0;
    for (double& x : out) {
      x = gamma(alpha);
      sum += x;
    }
    if (sum <= 0.0) {
      const double uniform_weight = 1.0 / static_cast<double>(out.size());
      for (double& x : out) x = uniform_weight;
      return;
    }
    for (double& x : out) x /= sum;
  }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

 private:
  long long poisson_knuth(double mean) {
    if (mean <= 0.0) return 0;
    const double threshold = std::exp(-mean);
    long long k = -1;
    double p = 1.0;
    do {
      ++k;
      p *= uniform01();
    } while (p > threshold);
    return k;
  }

  std::mt19937_64 engine_;
};

}  // namespace expnet
