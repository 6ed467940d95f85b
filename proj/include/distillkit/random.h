// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace distillkit {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n).
inline uint64_t uniform_index(Rng& rng, uint64_t n) {
    return static_cast<uint64_t>(uniform01(rng) * static_cast<double>(n));
}

/// Normal(0, stddev) resampled until within two standard deviations.
inline double truncated_normal(Rng& rng, double stddev) {
    for (;;) {
        // Box-Muller keeps the stream independent of the standard library's
        // distribution implementation.
        const double u1 = 1.0 - uniform01(rng);
        const double u2 = uniform01(rng);
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
        if (std::abs(z) <= 2.0) return z * stddev;
    }
}

/// Derives an independent stream seed from a base seed and a tag.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
    uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace distillkit
