#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace frim {

// Deterministic pseudo-random generator (xoshiro256++ seeded through
// splitmix64).  std::mt19937 plus the standard distributions would be the
// obvious choice, but the distribution implementations are not pinned down
// by the standard and differ across library vendors; reproducibility of
// seeded runs across platforms is a hard requirement here, so the few
// variate transforms we need are spelled out explicitly.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
    }

    // Child generator identified by an integer path, e.g. {replicate, chain}.
    // Children with distinct paths have statistically independent streams,
    // which keeps parallel work schedule-independent: every unit of work
    // owns its own generator derived from (seed, path).
    static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
        std::uint64_t x = seed;
        for (std::uint64_t p : path) {
            x ^= splitmix64_mix(p + 0x9e3779b97f4a7c15ULL);
            x = splitmix64_mix(x);
        }
        return Rng(x);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer on [0, n), n >= 1.  Rejection keeps it unbiased.
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via the Marsaglia polar method (spare value cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    // Exponential with rate 1.
    double exponential() { return -std::log1p(-uniform()); }

private:
    static std::uint64_t splitmix64_mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        return splitmix64_mix(x);
    }

    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace frim
