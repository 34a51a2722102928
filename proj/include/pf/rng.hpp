#pragma once

#include <cmath>
#include <cstdint>

namespace pf {

// Small splitmix64-based stream. We avoid <random> distributions so draws are
// identical across standard library implementations; seeded substreams come
// from fork(), keyed forks make counter-based per-index streams.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1).
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    // Box-Muller, one value per call (the pair's second half is discarded to
    // keep the stream position independent of call parity).
    double gaussian(double mean, double stddev) {
        double u1 = next_unit();
        double u2 = next_unit();
        while (u1 <= 0.0) u1 = next_unit();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return n ? next_u64() % n : 0; }

    // Independent substream keyed on `key`; deterministic, order-free.
    Rng fork(std::uint64_t key) const {
        Rng r(state_ ^ (0xD6E8FEB86659FD93ULL * (key + 1)));
        r.next_u64();
        return r;
    }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

// Stable 64-bit hash for sub-seed derivation (FNV-1a).
inline std::uint64_t hash64(std::uint64_t x) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (int i = 0; i < 8; ++i) {
        h ^= (x >> (8 * i)) & 0xFF;
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace pf
