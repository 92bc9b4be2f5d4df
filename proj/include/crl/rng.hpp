#pragma once

#include <cmath>
#include <cstdint>

namespace crl {

// Deterministic counter-based stream built on splitmix64. Identical seed and
// call sequence give identical integer draws on every platform; floating
// point derivations on top differ at most by libm rounding.
class Rng {
public:
    Rng() : state_(0) {}
    explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x5851f42d4c957f2dULL)) {}

    // Derives an independent stream without advancing this one.
    Rng split(std::uint64_t stream) const {
        Rng r;
        r.state_ = mix(state_ ^ mix(stream + 0x9e3779b97f4a7c15ULL));
        return r;
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Multiply-shift bounding; bias is below
    // n / 2^64 which is irrelevant for simulator-scale n.
    int uniform_int(int n) {
        return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                                 static_cast<unsigned __int128>(n)) >> 64);
    }

    // Standard normal via Box-Muller, one value per call (no cached spare,
    // keeps the draw count predictable for replay).
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1], avoids log(0)
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

}  // namespace crl
