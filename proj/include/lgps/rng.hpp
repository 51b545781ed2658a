#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace lgps {

// Seeded generator with a bit-exact stream on every platform: the engine is
// std::mt19937_64 (whose output sequence is fixed by the standard) and all
// derived distributions are implemented here rather than taken from <random>,
// whose distributions are implementation-defined.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "mt19937_64";

  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via the Box-Muller transform (pairs are cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent child stream, e.g. one per scene, derived with splitmix64.
  Rng split(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[below(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace lgps
