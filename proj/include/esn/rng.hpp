#pragma once

#include <cstdint>

namespace esn {

// Small deterministic generator (splitmix64). Used everywhere randomness is
// needed so that identical seeds give identical artifacts across platforms
// and standard-library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1) with 53 random bits.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform double in [-1, 1).
    double next_symmetric() { return 2.0 * next_unit() - 1.0; }

    // Uniform integer in [0, n), n > 0. Multiply-shift bound; bias is far
    // below anything observable at our sample counts.
    uint64_t next_below(uint64_t n) {
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Derives an independent stream for a named sub-purpose.
    Rng fork(uint64_t stream_tag) const {
        Rng r(state_ ^ (0xA5A5A5A55A5A5A5AULL + stream_tag * 0x9E3779B97F4A7C15ULL));
        r.next_u64();
        return r;
    }

private:
    uint64_t state_;
};

}  // namespace esn
