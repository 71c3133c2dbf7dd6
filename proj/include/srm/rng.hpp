#pragma once

#include <cstdint>
#include <random>

namespace srm {

// Deterministic RNG. std::mt19937_64 output is pinned by the standard; the
// std distributions are not, so bounded draws are done here by hand to keep
// seeded results bit-identical across compilers.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform integer in [0, n). Lemire multiply-shift with rejection.
  uint64_t below(uint64_t n) {
    if (n == 0) return 0;
    while (true) {
      uint64_t x = next_u64();
      __uint128_t m = static_cast<__uint128_t>(x) * n;
      uint64_t lo = static_cast<uint64_t>(m);
      if (lo >= n || lo >= (uint64_t(0) - n) % n) return static_cast<uint64_t>(m >> 64);
    }
  }

  int range_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double real01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * real01(); }

  bool coin() { return (next_u64() & 1u) != 0; }

 private:
  std::mt19937_64 eng_;
};

// splitmix64; used to derive independent substream seeds from a master seed.
inline uint64_t derive_seed(uint64_t base, uint64_t salt) {
  uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace srm
