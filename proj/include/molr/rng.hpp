#pragma once
#include <cstdint>
#include <cmath>
#include <string_view>

namespace molr {

// PCG32 (O'Neill, pcg-random.org, XSH-RR variant). Chosen over std::mt19937
// so that streams are splittable by key and identical across platforms and
// standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t stream = 0) {
        state_ = 0u;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
    }

    uint64_t next_u64() {
        uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        uint64_t threshold = (-n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Box-Muller; one draw per call, cache unused.
    double gaussian() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 0.0, u2 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        u2 = uniform();
        double m = std::sqrt(-2.0 * std::log(u1));
        cached_ = m * std::sin(6.283185307179586 * u2);
        has_cached_ = true;
        return m * std::cos(6.283185307179586 * u2);
    }

    // Derive a child stream from a label so subsystems do not share draws.
    Rng split(std::string_view label) const {
        uint64_t h = 1469598103934665603ULL;
        for (char c : label) {
            h ^= static_cast<uint8_t>(c);
            h *= 1099511628211ULL;
        }
        return Rng(state_ ^ h, h);
    }

private:
    uint64_t state_ = 0;
    uint64_t inc_ = 1;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

// FNV-1a over bytes, used for content checksums and stable hashing.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = 1469598103934665603ULL) {
    return fnv1a(s.data(), s.size(), h);
}

} // namespace molr
