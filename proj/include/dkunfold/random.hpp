#pragma once

// Platform-stable random streams. Bits come from std::mt19937_64, whose
// output sequence is fixed by the standard; uniforms use the top 53 bits.
// Poisson variates use inverse-transform search for mean < 30 and Hormann's
// PTRS transformed rejection (1993) otherwise. std::poisson_distribution is
// avoided because its algorithm differs between standard libraries.

#include <cmath>
#include <cstdint>
#include <random>

namespace dku {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Order-sensitive combination of a seed with an index.
inline constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) noexcept
{
    return splitmix64(splitmix64(seed) ^ (index + 0x632BE59BD9B4E019ull));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t bits() { return engine_(); }

    std::uint64_t poisson(double mean)
    {
        if (!(mean > 0.0))
            return 0;
        return mean < 30.0 ? poisson_inversion(mean) : poisson_ptrs(mean);
    }

private:
    std::uint64_t poisson_inversion(double mean)
    {
        const double u = uniform();
        double p = std::exp(-mean);
        double cdf = p;
        std::uint64_t k = 0;
        // The tail beyond 400 has probability far below 2^-53 for mean < 30.
        while (u >= cdf && k < 400) {
            ++k;
            p *= mean / static_cast<double>(k);
            cdf += p;
        }
        return k;
    }

    std::uint64_t poisson_ptrs(double mean)
    {
        const double slam = std::sqrt(mean);
        const double loglam = std::log(mean);
        const double b = 0.931 + 2.53 * slam;
        const double a = -0.059 + 0.02483 * b;
        const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
        const double vr = 0.9277 - 3.6224 / (b - 2.0);
        for (;;) {
            const double u = uniform() - 0.5;
            const double v = uniform();
            const double us = 0.5 - std::abs(u);
            const double k = std::floor((2.0 * a / us + b) * u + mean + 0.43);
            if (us >= 0.07 && v <= vr)
                return static_cast<std::uint64_t>(k);
            if (k < 0.0 || (us < 0.013 && v > us))
                continue;
            if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
                -mean + k * loglam - std::lgamma(k + 1.0))
                return static_cast<std::uint64_t>(k);
        }
    }

    std::mt19937_64 engine_;
};

} // namespace dku
