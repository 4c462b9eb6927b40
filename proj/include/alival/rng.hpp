#pragma once

// Deterministic, platform-independent randomness.
//
// std::mt19937_64 produces the same stream everywhere, but the standard
// distributions do not, so the samplers here are written out explicitly.
// Sub-streams are derived from a master seed by hashing a text label plus
// an index; adding a new labelled consumer never perturbs existing ones.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace alival {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Sub-seed for the consumer identified by (label, index).
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t index = 0) {
    std::uint64_t h = splitmix64(master ^ fnv1a(label));
    return splitmix64(h ^ splitmix64(index + 0x51ed270b0a9cd1a5ULL));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

// Uniform double in [0, 1) with 53 usable bits.
inline double uniform_real(Rng& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform_real(Rng& g, double lo, double hi) {
    return lo + (hi - lo) * uniform_real(g);
}

// Uniform integer in [0, n) by rejection, bias-free.
inline std::uint64_t uniform_index(Rng& g, std::uint64_t n) {
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t x;
    do {
        x = g();
    } while (x >= limit);
    return x % n;
}

inline bool bernoulli(Rng& g, double p) { return uniform_real(g) < p; }

// k distinct positions drawn from {0, ..., n-1} via partial Fisher-Yates,
// returned in ascending order.
inline std::vector<std::size_t> sample_without_replacement(Rng& g, std::size_t n,
                                                           std::size_t k) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform_index(g, n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace alival
