#pragma once
// Counter-based PRNG on the splitmix64 mixer. The full state is (seed,
// counter), so the same pair replays the same draws on every platform and the
// state serializes into checkpoints as two integers. Distribution transforms
// (uniform, gaussian, bernoulli) are spelled out here instead of relying on
// <random>, whose distributions are not bit-stable across standard libraries.

#include <cmath>
#include <cstdint>

namespace agepred {

struct RngState {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;

    RngState() = default;
    explicit RngState(std::uint64_t s) : seed(s) {}

    std::uint64_t next_u64() {
        std::uint64_t z = seed + (++counter) * 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53 bits of mantissa.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Standard normal via Box-Muller; consumes exactly two uniforms.
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        constexpr double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    bool next_bernoulli(double p) { return next_double() < p; }

    // Integer in [0, n) by multiply-shift; bias is negligible for n << 2^64.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Derive an independent stream, e.g. one per fold or per purpose.
    static RngState derive(std::uint64_t seed, std::uint64_t stream) {
        RngState mixer(seed ^ (0xA0761D6478BD642Full + stream));
        RngState out(mixer.next_u64());
        return out;
    }
};

}  // namespace agepred
