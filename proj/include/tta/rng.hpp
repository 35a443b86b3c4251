#pragma once

#include <cstdint>
#include <vector>

namespace tta {

// Deterministic RNG built on splitmix64. The standard library distributions
// are implementation-defined, so uniform/normal/poisson are spelled out here
// to keep every run bit-reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; generates a fresh pair per call and discards the sine branch
  // so the call sequence has no hidden state.
  double normal();

  // Knuth's product method; exact and deterministic for the desk-scale
  // lambdas used by shot noise (lambda <= ~700 before exp underflow).
  int poisson(double lambda);

  // Unbiased integer in [0, n) via rejection sampling.
  uint64_t below(uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent stream id from (base, k); used for per-image and
  // per-run streams so parallel and serial execution agree bit-exactly.
  static uint64_t mix(uint64_t base, uint64_t k) {
    uint64_t z = base + 0x9E3779B97F4A7C15ULL * (k + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  uint64_t state_;
};

}  // namespace tta
