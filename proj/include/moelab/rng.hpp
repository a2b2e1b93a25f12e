// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "moelab/common.hpp"

namespace moelab {

/// Deterministic counter-based generator (splitmix64 core). The state is the
/// pair (seed, calls), so any stream position can be restored in O(1) and two
/// generators with the same seed produce bit-identical draws in call order.
class Rng {
public:
    explicit Rng(u64 seed) : seed_(seed) {}

    u64 seed() const { return seed_; }
    u64 position() const { return calls_; }

    void restore(u64 position, bool has_cached, double cached) {
        calls_ = position;
        has_cached_normal_ = has_cached;
        cached_normal_ = cached;
    }
    bool has_cached_normal() const { return has_cached_normal_; }
    double cached_normal() const { return cached_normal_; }

    u64 next_u64() {
        ++calls_;
        u64 z = seed_ + calls_ * 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform draw in [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Integer in [0, n), n > 0. Modulo bias is irrelevant at the n used here.
    u64 uniform_index(u64 n) { return next_u64() % n; }

    /// Standard normal via Box-Muller; the second value of each pair is cached.
    double normal() {
        if (has_cached_normal_) {
            has_cached_normal_ = false;
            return cached_normal_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643 * u2;
        cached_normal_ = r * std::sin(theta);
        has_cached_normal_ = true;
        return r * std::cos(theta);
    }

    /// Normal(0, stddev) truncated to +/- clip_sigmas by rejection.
    double truncated_normal(double stddev, double clip_sigmas = 2.0) {
        for (;;) {
            const double z = normal();
            if (std::abs(z) <= clip_sigmas) return z * stddev;
        }
    }

private:
    u64 seed_ = 0;
    u64 calls_ = 0;
    bool has_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

/// Labeled seed derivation: one root seed fans out to independent subsystem
/// streams. FNV-1a over the label, mixed with the root and an index.
inline u64 derive_seed(u64 root, std::string_view label, u64 index = 0) {
    u64 h = 0xcbf29ce484222325ULL;
    for (const char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    h ^= root + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h ^= index * 0xd1b54a32d192ed03ULL;
    // one splitmix64 finalization round
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
    return h ^ (h >> 31);
}

} // namespace moelab
