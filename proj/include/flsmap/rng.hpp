#pragma once

#include <cmath>
#include <cstdint>

namespace flsmap {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// xoshiro256** — small, fast, and identical on every platform, which is what
/// the bitwise-determinism contract of the trainer requires (std:: distributions
/// are implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0x853c49e6748fea9bull) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  /// Derive an independent stream, e.g. per (step, pixel).
  static Rng derive(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t sm = seed;
    uint64_t h = splitmix64(sm);
    sm = h ^ (a * 0x9e3779b97f4a7c15ull);
    h = splitmix64(sm);
    sm = h ^ (b * 0xc2b2ae3d27d4eb4full);
    h = splitmix64(sm);
    sm = h ^ (c * 0x165667b19e3779f9ull);
    return Rng(splitmix64(sm));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0,1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo,hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0,n). n must be > 0.
  uint64_t below(uint64_t n) {
    // Multiply-shift; bias is negligible for n far below 2^64.
    return uint64_t((__uint128_t(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller (no rejection, fixed draw count).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4]{};
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace flsmap
