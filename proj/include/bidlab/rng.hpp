#pragma once

#include <cstdint>
#include <random>

namespace bidlab {

// Deterministic random source. The engine is std::mt19937_64 (its output
// sequence is pinned by the standard), and every distribution conversion is
// implemented here rather than with std::*_distribution, whose algorithms
// vary across standard libraries. Identical seeds therefore give identical
// streams on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. Each draw consumes exactly two uniforms
  // and discards the paired variate, so the stream position never depends on
  // call history.
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Poisson by Knuth's product-of-uniforms method. Large means are split
  // into chunks so exp(-mean) stays representable; the sum of independent
  // Poisson draws has the right law.
  long poisson(double mean);

  // Gamma with the given shape and scale, Marsaglia-Tsang squeeze for
  // shape >= 1 and the boost trick gamma(k) = gamma(k+1) * U^(1/k) below.
  double gamma(double shape, double scale);

  double lognormal(double mu, double sigma);

  // Decorrelated child seed for a named substream (splitmix64 finalizer).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 gen_;
};

}  // namespace bidlab
