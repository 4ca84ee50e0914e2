// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#ifndef BALMIX_RNG_HPP
#define BALMIX_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace balmix {

// All randomness in the pipeline flows from one global seed through
// derive_seed(). Bounded values and shuffles are produced here rather than
// through <random> distributions, whose output is not pinned down by the
// standard; engine output is, so identical seeds give identical artifacts
// on every platform.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stage seed: global seed mixed with a stage tag ("vocab", "masking", ...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return splitmix64(seed ^ fnv1a64(tag));
}

// Shard seed: stage seed mixed with a shard/ordinal index.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Unbiased integer in [0, n). Rejection sampling on the top range.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
    std::uint64_t u;
    do {
      u = eng_();
    } while (u >= limit);
    return u % n;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double next_unit() {
    return double(eng_() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return next_unit() < p; }

  // Standard normal via Box-Muller (one value per call; the pair's second
  // half is discarded to keep the consumption pattern simple).
  double next_normal() {
    double u1 = double((eng_() >> 11) + 1) * 0x1.0p-53;  // (0,1]
    double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Normal truncated at two standard deviations, the usual embedding init.
  double next_trunc_normal(double sigma) {
    double z;
    do {
      z = next_normal();
    } while (z < -2.0 || z > 2.0);
    return z * sigma;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = std::size_t(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace balmix

#endif  // BALMIX_RNG_HPP
