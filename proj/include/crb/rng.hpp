#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace crb {

// Seeded generator with platform-independent distributions. The standard
// <random> distributions are implementation-defined, so everything that feeds
// a golden file goes through these instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n);

  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  double lognormal(double log_mean, double log_sigma);
  std::uint64_t poisson(double mean);
  bool bernoulli(double p) { return uniform() < p; }

  // Index drawn proportionally to nonnegative weights; the total must be positive.
  std::size_t discrete(std::span<const double> weights);

  // Child generator whose stream is a deterministic function of this one.
  Rng split() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ULL); }

 private:
  std::mt19937_64 engine_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

// Fisher-Yates partial shuffle: k distinct indices from [0, n) in draw order.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng);

// Stable 64-bit mix used to derive per-item seeds (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace crb
