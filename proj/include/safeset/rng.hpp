#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>

namespace safeset {

/// Seeded random source with hand-rolled draws so that identical seeds give
/// identical streams regardless of the standard library's distribution
/// implementations. One instance per run (or per independent stream).
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : gen_(seed ^ (0x9e3779b97f4a7c15ull * (stream + 1))) {}

    /// Uniform draw in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    int uniform_int(int n) {
        if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
        // rejection sampling to avoid modulo bias
        const std::uint64_t bound = UINT64_MAX - UINT64_MAX % static_cast<std::uint64_t>(n);
        std::uint64_t r = gen_();
        while (r >= bound) r = gen_();
        return static_cast<int>(r % static_cast<std::uint64_t>(n));
    }

    /// Standard normal via Box-Muller.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Index drawn from an (unnormalized is not allowed) probability vector.
    int sample_discrete(std::span<const double> probs) {
        const double u = uniform();
        double acc = 0.0;
        int last = 0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            if (probs[i] <= 0.0) continue;
            acc += probs[i];
            last = static_cast<int>(i);
            if (u < acc) return last;
        }
        return last;  // guard against accumulated rounding
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace safeset
