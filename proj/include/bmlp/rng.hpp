#pragma once

#include <cstdint>

namespace bmlp {

/// Counter-based random stream: every draw is a pure function of
/// (seed, counter), so a stream can be reconstructed at any point and two
/// streams with the same state produce the same values on any platform or
/// thread. Mixing is SplitMix64.
struct RngStream {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;

    RngStream() = default;
    explicit RngStream(std::uint64_t s, std::uint64_t c = 0) : seed(s), counter(c) {}

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() {
        ++counter;
        return mix(seed + 0x9E3779B97F4A7C15ULL * counter);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be nonzero.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    /// Independent substream keyed by up to three labels. Used to hand each
    /// epoch/instance its own stream so results do not depend on scheduling.
    RngStream fork(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const {
        std::uint64_t s = mix(seed ^ mix(a + 0x9E3779B97F4A7C15ULL));
        s = mix(s ^ mix(b + 0xD1B54A32D192ED03ULL));
        s = mix(s ^ mix(c + 0x8CB92BA72F3D8DD7ULL));
        return RngStream(s);
    }

    template <class Vec>
    void shuffle(Vec& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }
};

} // namespace bmlp
