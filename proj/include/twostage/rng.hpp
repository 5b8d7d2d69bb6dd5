#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace twostage {

// splitmix64; used to turn (seed, stream indices) into well-mixed engine seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d4a08685748575ULL;
    return z ^ (z >> 31);
}

// Deterministic random stream. Each replicate/bootstrap draw owns its own
// stream keyed by (seed, indices), so results do not depend on scheduling
// or worker count. All distributions are implemented here rather than via
// std::*_distribution, whose output is not pinned by the standard.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : gen_(seed) {}

    static RngStream from_key(std::uint64_t seed, std::uint64_t a = 0,
                              std::uint64_t b = 0, std::uint64_t c = 0);

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller (two uniforms per draw, no cached state).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        // uniform() can return 0; 1-u1 is in (0, 1]
        return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // Exponential with the given rate.
    double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

    // Uniform integer in [0, n), unbiased.
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
        std::uint64_t v;
        do {
            v = gen_();
        } while (v >= limit);
        return v % n;
    }

private:
    std::mt19937_64 gen_;
};

// Mixes (seed, indices) into a single engine seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
    std::uint64_t s = seed;
    std::uint64_t k = splitmix64(s);
    s ^= a + 0x165667b19e3779f9ULL;
    k ^= splitmix64(s);
    s ^= b + 0x27d4eb2f165667c5ULL;
    k ^= splitmix64(s);
    s ^= c + 0x85ebca77c2b2ae63ULL;
    k ^= splitmix64(s);
    return k;
}

inline RngStream RngStream::from_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return RngStream(mix_seed(seed, a, b, c));
}

}  // namespace twostage
