#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace fedmobile {

// splitmix64 finalizer, used to derive independent seeds from (seed, k, c, ...)
// tuples so client/round streams never overlap.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  std::uint64_t s = mix64(base);
  s = mix64(s ^ (a + 0x9e3779b97f4a7c15ULL));
  s = mix64(s ^ (b + 0xc2b2ae3d27d4eb4fULL));
  s = mix64(s ^ (c + 0x165667b19e3779f9ULL));
  return s;
}

// Deterministic random stream. mt19937_64 output is fully specified by the
// standard; the distribution transforms are hand-rolled here because the
// std::*_distribution classes are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. Consumes two draws per call.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Index in [0, n). Modulo bias is negligible for the sizes used here.
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  // Gamma(shape, 1) via Marsaglia-Tsang, used for Dirichlet draws.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = 1.0 - uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = 1.0 - uniform();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  std::vector<double> dirichlet(std::size_t k, double beta) {
    std::vector<double> p(k);
    double sum = 0.0;
    for (auto& v : p) {
      v = gamma(beta);
      sum += v;
    }
    for (auto& v : p) v /= sum;
    return p;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fedmobile
