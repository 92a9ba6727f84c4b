#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace retinex {

// Samplers built on raw mt19937_64 output. The engine's bit stream is fixed
// by the standard, so unlike std::*_distribution these draws are identical
// across standard-library implementations, which checkpointing and the
// reproducibility guarantees rely on.

/// Uniform double in [0, 1).
inline double rand_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1p-53;
}

/// Uniform double in [lo, hi).
inline double rand_uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * rand_uniform(rng);
}

/// Standard normal draw (Box-Muller, cosine branch; two engine calls).
inline double rand_normal(std::mt19937_64& rng) {
    const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1p-53;  // (0, 1]
    const double u2 = rand_uniform(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

/// Uniform integer in [0, n), bias-free by rejection.
inline std::uint64_t rand_index(std::mt19937_64& rng, std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

}  // namespace retinex
