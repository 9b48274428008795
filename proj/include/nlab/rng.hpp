#pragma once

#include <cstdint>
#include <random>

namespace nlab {

// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Seed for stream `stream` under a base seed, e.g. (trial seed, epoch).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept;

// Thin wrapper over mt19937_64. The engine output is fixed by the standard;
// the distributions below are implemented here so that draws do not depend
// on the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  // Standard normal, Box-Muller (one value per call).
  double normal();

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// One uniform draw in [0, 1) determined solely by (seed, position).
double positional_uniform(std::uint64_t seed, std::uint64_t position) noexcept;

}  // namespace nlab
