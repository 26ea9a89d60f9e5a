// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace nsad {

// splitmix64: tiny, well-mixed, and fully portable. Every random choice in
// the library flows through this generator so that a (root seed, stream tag)
// pair pins results bit-for-bit regardless of platform or thread count.
struct SplitMix64 {
  uint64_t state;

  explicit SplitMix64(uint64_t seed) : state(seed) {}

  uint64_t next() {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Unbiased enough for index selection; deterministic is what matters here.
  uint64_t bounded(uint64_t n) {
    return static_cast<uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  // [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }
};

// Counter-based stream derivation: children of a root seed are obtained by
// hashing (root, tag), never by consuming from a shared generator, so adding
// a consumer never shifts another consumer's stream.
inline uint64_t mix_seed(uint64_t root, uint64_t tag) {
  SplitMix64 g(root ^ (0x632be59bd9b4e019ULL + 0x9e3779b97f4a7c15ULL * tag));
  return g.next();
}

inline uint64_t mix_seed(uint64_t root, uint64_t tag_a, uint64_t tag_b) {
  return mix_seed(mix_seed(root, tag_a), tag_b);
}

// Fisher-Yates with our own generator; std::shuffle is not reproducible
// across standard library implementations.
inline void fill_permutation(std::vector<uint32_t>& perm, size_t n, uint64_t seed) {
  perm.resize(n);
  for (size_t i = 0; i < n; ++i) perm[i] = static_cast<uint32_t>(i);
  SplitMix64 g(seed);
  for (size_t i = n; i > 1; --i) {
    size_t j = static_cast<size_t>(g.bounded(i));
    uint32_t t = perm[i - 1];
    perm[i - 1] = perm[j];
    perm[j] = t;
  }
}

inline std::vector<uint32_t> permutation(size_t n, uint64_t seed) {
  std::vector<uint32_t> perm;
  fill_permutation(perm, n, seed);
  return perm;
}

}  // namespace nsad
