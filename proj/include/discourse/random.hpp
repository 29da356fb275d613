#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace discourse {

/// Seeded generator whose output is fixed by the seed alone. The standard
/// distributions are implementation-defined, so the draws are derived from raw
/// mt19937_64 words here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do x = engine_();
        while (x >= limit);
        return x % n;
    }

    bool chance(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[below(i)]);
    }

    void fill_uniform(std::span<double> out, double lo, double hi) {
        for (double& v : out) v = uniform(lo, hi);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace discourse
