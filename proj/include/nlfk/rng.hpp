#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace nlfk {

/// Stateless counter-based generator: every draw is a pure function of
/// (seed, stream, a, b, c), so any increment can be regenerated in any
/// order and on any thread.
class CounterRng {
public:
    constexpr explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))) {}

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        // splitmix64 finalizer
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    constexpr std::uint64_t bits(std::uint64_t a, std::uint64_t b, std::uint64_t c) const noexcept {
        std::uint64_t h = mix(key_ ^ a);
        h = mix(h ^ (b * 0xd6e8feb86659fd93ULL));
        return mix(h ^ (c * 0xa0761d6478bd642fULL));
    }

    /// Uniform on the open interval (0, 1).
    double uniform(std::uint64_t a, std::uint64_t b, std::uint64_t c) const noexcept {
        return (static_cast<double>(bits(a, b, c) >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller on two decorrelated uniforms.
    double normal(std::uint64_t a, std::uint64_t b, std::uint64_t c) const noexcept {
        const double u1 = uniform(a, b, 2 * c);
        const double u2 = uniform(a, b, 2 * c + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t key_;
};

/// Sequential view over a CounterRng, for sampling loops that just need
/// "the next number".
class SampleStream {
public:
    SampleStream(std::uint64_t seed, std::uint64_t stream) : rng_(seed, stream) {}

    double uniform() { return rng_.uniform(counter_++, 0, 0); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal() { return rng_.normal(counter_++, 1, 0); }

private:
    CounterRng rng_;
    std::uint64_t counter_ = 0;
};

}  // namespace nlfk
