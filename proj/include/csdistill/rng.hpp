#pragma once

#include <cstdint>
#include <random>

namespace csd {

// All randomness flows through mt19937_64 (whose output sequence is pinned by
// the standard) plus the hand-rolled transforms below. std::*_distribution is
// never used, so identical seeds reproduce identical streams on every
// platform, not just within one build.
using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from a root seed and a stream tag.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    return splitmix64(root ^ splitmix64(stream));
}

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

// Uniform double in [0, 1) built from the top 53 bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

}  // namespace csd
