#ifndef DRMO_RNG_HPP
#define DRMO_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace drmo::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Stable sub-stream derivation: (seed, stream) pairs map to decorrelated seeds,
// so tasks can draw independently regardless of scheduling.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(splitmix64(base) ^ (0xD1B54A32D192ED03ULL * (stream + 1)));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(base, a), b);
}

// Deterministic generator over the standardized mt19937_64 sequence.  All
// derived variates use explicit arithmetic only, so streams are reproducible
// across platforms for a fixed seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // (0, 1]
  double uniform_pos() { return 1.0 - uniform(); }

  bool bernoulli(double prob) { return uniform() < prob; }

  // Box-Muller; the paired draw is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform_pos()));
    const double t = 2.0 * M_PI * uniform();
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  double lognormal(double log_location, double log_scale) {
    return std::exp(log_location + log_scale * normal());
  }

  // Beta(1, b) by CDF inversion: F(x) = 1 - (1-x)^b.
  double beta_one(double b) { return 1.0 - std::pow(1.0 - uniform(), 1.0 / b); }

  long poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean < 10.0) return poisson_inversion(mean);
    return poisson_ptrs(mean);
  }

 private:
  // Sequential-search inversion; O(mean) per draw.
  long poisson_inversion(double mean) {
    long k = 0;
    double p = std::exp(-mean);
    double cum = p;
    const double u = uniform();
    const long cap = static_cast<long>(10.0 * mean) + 100;
    while (u > cum && k < cap) {
      ++k;
      p *= mean / static_cast<double>(k);
      cum += p;
    }
    return k;
  }

  // Hormann's PTRS transformed rejection, valid for mean >= 10.
  long poisson_ptrs(double mean) {
    const double slam = std::sqrt(mean);
    const double llam = std::log(mean);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
      const double u = uniform() - 0.5;
      const double v = uniform();
      const double us = 0.5 - std::abs(u);
      const double kd = std::floor((2.0 * a / us + b) * u + mean + 0.43);
      if (us >= 0.07 && v <= v_r) return static_cast<long>(kd);
      if (kd < 0.0 || (us < 0.013 && v > us)) continue;
      const double k = kd;
      if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
          k * llam - mean - std::lgamma(k + 1.0)) {
        return static_cast<long>(kd);
      }
    }
  }

  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace drmo::rng

#endif  // DRMO_RNG_HPP
