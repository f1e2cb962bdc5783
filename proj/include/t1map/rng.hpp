#pragma once

#include <cmath>
#include <cstdint>

namespace t1map {

/// Counter-seedable splitmix64 generator. Streams derived from the same
/// root seed but different stream ids are independent, which makes
/// per-voxel / per-run randomness reproducible regardless of evaluation
/// order or thread count.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    /// Independent child stream, e.g. Rng::derive(seed, voxel_index).
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        Rng mixer(seed);
        std::uint64_t a = mixer.next_u64();
        return Rng(a ^ (stream * 0x9e3779b97f4a7c15ULL + 0xbf58476d1ce4e5b9ULL));
    }

    static Rng derive(std::uint64_t seed, std::uint64_t s1, std::uint64_t s2) {
        Rng r = derive(seed, s1);
        return derive(r.next_u64(), s2);
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Lemire multiply-shift; n > 0.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Standard normal via Box-Muller; the paired draw is cached so one
    /// instance produces a fixed sequence.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

  private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

} // namespace t1map
