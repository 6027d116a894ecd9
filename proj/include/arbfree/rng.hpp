// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "arbfree/util.hpp"

namespace arbfree {

/// Deterministic PRNG (splitmix64) with portable Gaussian and Student-t
/// sampling. Sequences depend only on the seed, never on the platform's
/// distribution implementations, which keeps every pipeline rerun
/// byte-identical.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform on (0,1), never exactly 0 or 1.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller (pair cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    /// Student-t with integer degrees of freedom: N / sqrt(chi2_nu / nu).
    double student_t(int nu) {
        if (nu < 1) throw ConfigError("student_t requires integer dof >= 1");
        double z = normal();
        double chi2 = 0.0;
        for (int i = 0; i < nu; ++i) {
            double g = normal();
            chi2 += g * g;
        }
        return z / std::sqrt(chi2 / static_cast<double>(nu));
    }

    void fill_normal(std::vector<double>& out) {
        for (auto& x : out) x = normal();
    }

    /// Deterministic Fisher-Yates shuffle of indices [0, n).
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_u64() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Derives a sub-seed for a named component stream from the global seed,
/// so partial pipeline reruns consume identical randomness.
inline uint64_t derive_seed(uint64_t root, std::string_view label) {
    uint64_t h = fnv1a64(label);
    h ^= root + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    // one splitmix scramble so nearby roots decorrelate
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

/// Per-path stream for parallel-safe simulation fan-out.
inline uint64_t path_seed(uint64_t component_seed, uint64_t path_id) {
    uint64_t h = component_seed;
    h ^= (path_id + 1) * 0xd1342543de82ef95ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

}  // namespace arbfree
