#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace belltest {

namespace detail {

// SplitMix64, used only to whiten user seeds into engine seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace detail

// Deterministic random source. mt19937_64 output is fully specified by the
// standard and the distributions below are implemented explicitly, so a given
// (seed, stream_id) always produces the same draw sequence. Every draw
// consumes a fixed number of engine steps (uniform/below/exponential: one,
// gauss: two), which keeps parallel streams insertion-order-stable.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Independent per-stream generator: station streams use stream_id 1 and 2,
    // pair-level (source) draws use stream_id 0.
    static Rng for_stream(std::uint64_t seed, std::uint64_t stream_id) {
        std::uint64_t s = seed + 0x632BE59BD9B4E019ULL * (stream_id + 1);
        return Rng(detail::splitmix64(s));
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n), n small.
    std::uint32_t below(std::uint32_t n) {
        return static_cast<std::uint32_t>(uniform() * n);
    }

    // Standard normal, Box-Muller cosine branch; 1 - uniform() lies in (0, 1]
    // so the logarithm is finite.
    double gauss() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // Exponential with the given mean.
    double exponential(double mean) { return -mean * std::log1p(-uniform()); }

    std::uint64_t raw() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

} // namespace belltest
