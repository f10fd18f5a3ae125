#pragma once

#include <cmath>
#include <cstdint>

namespace ribosphere {

// Deterministic, splittable PRNG (splitmix64 core). Every stochastic routine
// in the library takes an Rng& explicitly; there is no hidden global state,
// so a run is reproducible from a single seed. State is one u64, which makes
// it trivial to serialize into training checkpoints.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n). Modulo bias is < 2^-50 for the small n used here.
    uint64_t below(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller. No cached spare: keeps the state a
    // single u64 at the cost of one discarded value per call.
    double normal() {
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double u2 = uniform();
        constexpr double two_pi = 6.28318530717958647692528676655900577;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    // Derive an independent child stream (e.g. one per worker thread).
    Rng split() { return Rng(next_u64() ^ 0xd1b54a32d192ed03ULL); }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

private:
    uint64_t state_;
};

} // namespace ribosphere
