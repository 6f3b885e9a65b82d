#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace fairgrad {

/// SplitMix64 (Sebastiano Vigna, public domain): the single PRNG primitive
/// used everywhere results must be reproducible.  Chosen because the whole
/// generator is these nine lines, so any reimplementation of this toolkit
/// can match splits and synthetic data bit for bit.
///
/// Conventions, fixed for cross-implementation reproducibility:
///  - next():         state += 0x9E3779B97F4A7C15; output = mix of state.
///  - below(n):       multiply-shift bound, (next() * n) >> 64 on 128-bit
///                    intermediates.  Integer-only, hence exactly portable.
///  - uniform():      (next() >> 11) * 2^-53, in [0, 1).
///  - normal():       Box-Muller, sqrt(-2 ln u1) * cos(2 pi u2) with
///                    u1 = ((next() >> 11) + 1) * 2^-53 in (0, 1], u2 from
///                    uniform().  Two draws consumed per call; value is as
///                    portable as the platform's log/cos/sqrt.
///  - shuffle:        Fisher-Yates, i from n-1 down to 1, j = below(i + 1).
struct SplitMix64 {
    std::uint64_t state;

    explicit SplitMix64(std::uint64_t seed) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform integer in [0, n), n > 0.
    std::uint64_t below(std::uint64_t n) {
        using u128 = unsigned __int128;
        return static_cast<std::uint64_t>((u128(next()) * u128(n)) >> 64);
    }

    /// Uniform double in [0, 1).
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }

    /// Standard normal deviate.
    double normal() {
        double u1 = double((next() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }
};

/// Stateless seed derivation: the SplitMix64 output function applied to
/// seed + salt * golden gamma.  Used to give every consumer (split, init,
/// per-epoch shuffle, per-batch dropout) its own stream from one user seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + salt * 0x9E3779B97F4A7C15ull + 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Seeded Fisher-Yates permutation of {0, ..., n-1}.
inline std::vector<std::size_t> shuffled_indices(std::size_t n,
                                                 std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    SplitMix64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

}  // namespace fairgrad
