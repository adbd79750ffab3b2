#pragma once

#include <cmath>
#include <cstdint>

namespace sepad {

// Deterministic PRNG (splitmix64). Self-contained so that seeded runs are
// bit-reproducible across standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    return lo + int(next_u64() % uint64_t(hi - lo + 1));
  }

  // Box-Muller; the spare value is cached so draws stay paired.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Derived independent stream; tag picks the stream.
  Rng fork(uint64_t tag) const {
    Rng r(state_ ^ (0x632be59bd9b4e019ull * (tag + 1)));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Stable seed derivation for named purposes (init streams, epoch shuffles).
inline uint64_t derive_seed(uint64_t seed, uint64_t tag) {
  Rng r(seed ^ (0x9e3779b97f4a7c15ull * (tag + 0x51ull)));
  return r.next_u64();
}

}  // namespace sepad
