#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace layerfit {

// splitmix64; used to derive independent child seeds from (seed, index).
inline uint64_t split_seed(uint64_t seed, uint64_t index) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG. Uniform and normal draws are implemented explicitly
// (fixed bit mapping + Box-Muller) so sequences are identical across
// standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : seed_(seed), gen_(seed) {}

  uint64_t seed() const { return seed_; }

  Rng child(uint64_t index) const { return Rng(split_seed(seed_, index)); }

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  uint64_t uniform_index(uint64_t n) { return gen_() % n; }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace layerfit
