// Copyright 2026 The pauli-crystals Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace pauli {

/// splitmix64 finalizer: a cheap, well-mixed 64-bit hash. Used to scramble
/// seeds, derive independent stream seeds, and build counter-based uniforms.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Deterministic uniform in [0, 1) keyed by up to three integers. The same
/// key always yields the same value, independent of evaluation order — used
/// where per-item decisions must not depend on scheduling (e.g. per-shot
/// acceptance draws).
inline double hash_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t x = mix64(seed ^ mix64(a ^ mix64(b)));
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

/// Deterministic pseudo-random stream. Wraps std::mt19937_64 with explicit,
/// platform-independent uniform and normal transforms so that identical
/// (seed, stream) pairs produce byte-identical sequences everywhere.
///
/// std::normal_distribution is implementation-defined, so the normal variate
/// is generated by the (deterministic) Marsaglia polar method instead.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

    /// Independent sub-stream k of a master seed. Streams with different k
    /// (or different seeds) are decorrelated by the splitmix64 mixer.
    static Rng for_stream(std::uint64_t seed, std::uint64_t k) {
        return Rng(mix64(seed + 0x9e3779b97f4a7c15ULL * (k + 1)));
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased uniform integer in {0, ..., n-1}.
    std::uint64_t uniform_index(std::uint64_t n) {
        const std::uint64_t limit =
            std::numeric_limits<std::uint64_t>::max() -
            std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t r;
        do {
            r = next_u64();
        } while (r >= limit);
        return r % n;
    }

    /// Standard normal via Marsaglia's polar method (pairs cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        have_spare_ = true;
        return u * m;
    }

  private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace pauli
