#pragma once

// Deterministic random streams (PCG32). The whole pipeline draws from these
// rather than std:: distributions so that runs are reproducible bit-for-bit
// and generator state can be checkpointed and restored.

#include <cmath>
#include <cstdint>

#include "emodub/common.hpp"

namespace emodub {

class Pcg32 {
  public:
    Pcg32() : Pcg32(0, 0) {}

    // Distinct `stream` values give statistically independent sequences for
    // the same seed; used to pre-split per-sample generation streams.
    Pcg32(uint64_t seed, uint64_t stream) {
        state_ = 0u;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ull + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((0u - rot) & 31u));
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        uint64_t hi = next_u32();
        uint64_t lo = next_u32();
        uint64_t bits = ((hi << 32) | lo) >> 11;
        return static_cast<double>(bits) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; one value per call, no cached state.
    double gaussian() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Unbiased integer in [0, bound).
    uint32_t bounded(uint32_t bound) {
        uint32_t threshold = (0u - bound) % bound;
        for (;;) {
            uint32_t r = next_u32();
            if (r >= threshold) return r % bound;
        }
    }

    int range_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(bounded(static_cast<uint32_t>(hi - lo + 1)));
    }

    uint64_t state() const { return state_; }
    uint64_t inc() const { return inc_; }
    void restore(uint64_t state, uint64_t inc) {
        state_ = state;
        inc_ = inc;
    }

  private:
    uint64_t state_ = 0;
    uint64_t inc_ = 1;
};

// Named sub-stream: hash a label into a PCG stream id.
inline Pcg32 stream_rng(uint64_t seed, const std::string& label, uint64_t index = 0) {
    uint64_t h = fnv1a64(label);
    h = fnv1a64(&index, sizeof(index), h);
    return Pcg32(seed, h);
}

}  // namespace emodub
