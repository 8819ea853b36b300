#pragma once

#include <cstdint>

namespace tabledet {

// SplitMix64 (Steele, Lea, Flood 2014). Fixed algorithm so that corpora and
// sampling decisions reproduce bit-identically on every platform.
struct SplitMix64 {
    uint64_t state;

    explicit SplitMix64(uint64_t seed) : state(seed) {}

    uint64_t next() {
        uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // uniform double in [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n); n == 0 returns 0
    uint64_t below(uint64_t n) { return n == 0 ? 0 : next() % n; }

    // inclusive integer range
    int range(int lo, int hi) {
        if (hi <= lo) return lo;
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
    }
};

// Derives an independent stream seed from a base seed and a stream index.
inline uint64_t mix_seed(uint64_t base, uint64_t stream) {
    SplitMix64 rng(base ^ (0x632BE59BD9B4E019ull + stream * 0x9E3779B97F4A7C15ull));
    rng.next();
    return rng.next();
}

}  // namespace tabledet
