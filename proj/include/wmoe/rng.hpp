// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace wmoe {

// splitmix64 step; used for seed mixing so that derived streams are decorrelated.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives a stream seed from a base seed and up to three stream ids.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
  std::uint64_t s = seed;
  std::uint64_t out = splitmix64(s);
  s ^= a * 0xff51afd7ed558ccdULL;
  out ^= splitmix64(s);
  s ^= b * 0xc4ceb9fe1a85ec53ULL;
  out ^= splitmix64(s);
  s ^= c * 0x2545f4914f6cdd1dULL;
  out ^= splitmix64(s);
  return out;
}

// FNV-1a over a string, for seeding streams keyed by names (parameter paths, words).
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic RNG. The engine is mt19937_64 (bit stream fixed by the standard);
// the uniform and gaussian transforms are spelled out here instead of using
// std::*_distribution, whose algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return x % n;
  }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    if (u1 < 1e-300) u1 = 1e-300;
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace wmoe
