#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace wav2pix {

// Deterministic splitmix64 generator. Self-contained so that seeded runs are
// reproducible independently of the standard library implementation.
class Rng {
 public:
  Rng() = default;
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) return 0;
    uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller (no cached spare, keeps the state a single word).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

 private:
  uint64_t state_ = 0;
};

// Stable mixing of a seed with stream identifiers (epoch number, record id, ...).
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed ^ (0x9e3779b97f4a7c15ULL + (stream << 1));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace wav2pix
