#include "bidlab/rng.hpp"

#include <cmath>

namespace bidlab {

double Rng::normal() {
  // u1 is kept away from 0 so the log is finite.
  double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

long Rng::poisson(double mean) {
  long total = 0;
  while (mean > 500.0) {
    // Exact split: Poisson(a + b) = Poisson(a) + Poisson(b).
    long chunk = poisson(500.0);
    total += chunk;
    mean -= 500.0;
  }
  double limit = std::exp(-mean);
  long k = 0;
  double prod = uniform();
  while (prod > limit) {
    ++k;
    prod *= uniform();
  }
  return total + k;
}

double Rng::gamma(double shape, double scale) {
  if (shape < 1.0) {
    double u = uniform();
    // Avoid pow(0, ...) underflow edge: uniform() < 1 always, u == 0 is
    // possible but pow(0, 1/shape) = 0 is a valid (measure-zero) draw.
    return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
  }
  double d = shape - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x = normal();
    double t = 1.0 + c * x;
    if (t <= 0.0) continue;
    double v = t * t * t;
    double u = uniform();
    double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v * scale;
    if (u > 0.0 && std::log(u) < 0.5 * x2 + d - d * v + d * std::log(v))
      return d * v * scale;
  }
}

double Rng::lognormal(double mu, double sigma) {
  return std::exp(mu + sigma * normal());
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace bidlab
