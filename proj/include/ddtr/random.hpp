#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace ddtr {

/// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0);

/// Portable seeded generator.
///
/// Engine: std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Real-valued draws use explicit transforms (53-bit uniforms,
/// Box-Muller normals, Knuth Poisson) rather than the standard library
/// distributions, whose algorithms differ between implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  unsigned poisson(double lambda);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ddtr
