#pragma once

#include <cmath>
#include <cstdint>

namespace saldet {

// Deterministic PRNG with hand-rolled distribution conversions so every
// stream is bit-reproducible across platforms and standard-library versions.
// Core generator is splitmix64; uniform doubles take the top 53 bits.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n), unbiased via rejection
    std::uint64_t uniform_index(std::uint64_t n) {
        std::uint64_t lim = (~0ull) - (~0ull) % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= lim);
        return v % n;
    }

    int uniform_int(int lo, int hi) { // inclusive range [lo, hi]
        return lo + static_cast<int>(uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; the second variate of the pair is discarded to keep the
    // call sequence independent of caller mixing.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::uint64_t state_;
};

// Derives an independent child seed from a base seed and stream tags; used so
// every scene / batch item / init site gets its own reproducible stream.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag_a, std::uint64_t tag_b = 0) {
    std::uint64_t z = base ^ (0x9e3779b97f4a7c15ull + (tag_a << 6) + (tag_b << 23));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= tag_a * 0xd6e8feb86659fd93ull + tag_b * 0xa5a5a5a5a5a5a5a5ull;
    return z ^ (z >> 31);
}

} // namespace saldet
