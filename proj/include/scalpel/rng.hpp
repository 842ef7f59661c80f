#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "scalpel/common.hpp"

namespace scalpel {

// Deterministic RNG. The core is std::mt19937_64, whose output sequence is
// fixed by the standard; all derived draws (uniform reals, gaussians,
// shuffles) are implemented here rather than via std::*_distribution, whose
// algorithms are implementation-defined. Identical seeds therefore produce
// identical streams on any platform.
class Rng {
public:
    explicit Rng(u64 seed) : engine_(seed) {}

    u64 next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    u64 uniform_below(u64 n) {
        if (n == 0) throw ContractError("uniform_below: n must be positive");
        // Rejection sampling to avoid modulo bias.
        const u64 limit = ~u64{0} - (~u64{0} % n);
        u64 r = engine_();
        while (r >= limit) r = engine_();
        return r % n;
    }

    // Standard normal via Box-Muller (deterministic, no cached spare).
    double gaussian() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Deterministic permutation of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

private:
    std::mt19937_64 engine_;
};

// Mixes a base seed with a stream tag so sub-components get independent,
// reproducible streams (splitmix64 finalizer).
inline u64 derive_seed(u64 base, u64 stream) {
    u64 z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace scalpel
