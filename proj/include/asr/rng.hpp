#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace asr {

// splitmix64, used for seed derivation when splitting streams.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

inline uint64_t hash_str(std::string_view name) {
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

// mt19937_64 engine with explicit variate mappings. std::*_distribution is
// implementation-defined, so sampling is done by hand to keep runs
// reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : seed_(seed), gen_(mix64(seed)) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n), n > 0
  uint64_t uniform_index(uint64_t n) {
    // modulo bias is negligible for the small n used here
    return gen_() % n;
  }

  // standard normal via Box-Muller (deterministic across platforms)
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Derives an independent stream. Splits are keyed off the construction
  // seed, not the mutable engine state, so per-row generators stay
  // independent of parallel execution order.
  Rng split(uint64_t tag) const { return Rng(hash_combine(seed_, tag)); }
  Rng split(std::string_view name) const { return split(hash_str(name)); }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace asr
