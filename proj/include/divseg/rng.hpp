#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace divseg {

// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Seed for an independent sub-task: seed XOR mix64(index + golden gamma).
constexpr uint64_t derive_seed(uint64_t seed, uint64_t index) {
  return seed ^ mix64(index + 0x9E3779B97F4A7C15ULL);
}

/// Deterministic SplitMix64 generator.
///
/// Stream definition (bit-exact on every platform):
///   state <- state + 0x9E3779B97F4A7C15 (mod 2^64); output = mix64(state).
/// Derived quantities:
///   uniform()   = (next_u64() >> 11) * 2^-53, in [0, 1)
///   below(n)    = rejection sampling: draw r until r >= (2^64 - n) mod n,
///                 return r mod n
///   normal()    = Box-Muller cosine branch, one value per two uniforms
///   shuffle()   = Fisher-Yates from the back, swap i with below(i + 1)
///
/// The standard library distributions are implementation-defined, so none
/// are used here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix64(state_);
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  uint64_t below(uint64_t n) {
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      const uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log1p(-u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (size_t i = items.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  Rng derive(uint64_t index) const { return Rng(derive_seed(seed_, index)); }

 private:
  uint64_t seed_;
  uint64_t state_;
};

}  // namespace divseg
