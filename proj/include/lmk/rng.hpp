#pragma once

#include <cmath>
#include <cstdint>

namespace lmk {

// Counter-based uniform generator. Every draw is a pure function of
// (seed, stream, counter), so simulations are reproducible under any
// parallel schedule: individual i's draw for day t never depends on
// how work was split across threads.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    /// Raw 64-bit output for (stream, counter).
    std::uint64_t bits(std::uint64_t stream, std::uint64_t counter) const {
        std::uint64_t x = seed_;
        x = mix(x ^ mix(stream + 0x9e3779b97f4a7c15ULL));
        x = mix(x ^ mix(counter + 0xbf58476d1ce4e5b9ULL));
        return x;
    }

    /// Uniform double in [0, 1).
    double uniform(std::uint64_t stream, std::uint64_t counter) const {
        return static_cast<double>(bits(stream, counter) >> 11) * 0x1.0p-53;
    }

    /// Derive an independent child seed (bootstrap replicates, multistart).
    std::uint64_t derive(std::uint64_t stream) const {
        return bits(stream, 0x5851f42d4c957f2dULL);
    }

    /// Standard normal via Box-Muller on two counter draws.
    double normal(std::uint64_t stream, std::uint64_t counter) const {
        const double u1 = uniform(stream, 2 * counter);
        const double u2 = uniform(stream, 2 * counter + 1);
        constexpr double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(two_pi * u2);
    }

private:
    // splitmix64 finalizer
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
};

} // namespace lmk
