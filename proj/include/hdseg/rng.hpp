#pragma once

#include <cmath>
#include <cstdint>

namespace hdseg {

// Deterministic RNG with stdlib-independent distributions. std::mt19937_64's
// raw sequence is standardized but std::normal_distribution is not, so the
// transforms live here to keep seeded runs reproducible across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_index(uint64_t n) { return n ? next_u64() % n : 0; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0, u2 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 1e-300);
        u2 = uniform();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        spare_ = mag * std::sin(two_pi * u2);
        have_spare_ = true;
        return mag * std::cos(two_pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Independent stream derived from (seed, a, b); used so that batch draws
    // depend only on (run seed, worker, iteration) and resume replays exactly.
    static Rng derive(uint64_t seed, uint64_t a, uint64_t b = 0) {
        Rng r(seed);
        uint64_t h = r.next_u64();
        h ^= (a + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2));
        Rng r2(h);
        uint64_t h2 = r2.next_u64();
        h2 ^= (b + 0x9e3779b97f4a7c15ull + (h2 << 6) + (h2 >> 2));
        return Rng(h2);
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace hdseg
