#pragma once

#include <cstdint>
#include <string_view>

#include <Eigen/Dense>

namespace longctx {

// Counter-based deterministic random source. Streams are value types; a
// derived substream is independent of the parent's position, so results do
// not depend on evaluation order across modules.
class Rng {
public:
    Rng() : key_(0), counter_(0) {}
    explicit Rng(uint64_t seed) : key_(mix(seed ^ 0xA02B'DBF7'BB3C'0A7ULL)), counter_(0) {}

    // Derived substream with a fixed label. Same (seed, label) -> same stream.
    Rng sub(std::string_view label) const {
        Rng r;
        r.key_ = mix(key_ ^ fnv1a(label));
        return r;
    }
    Rng sub(uint64_t index) const {
        Rng r;
        r.key_ = mix(key_ ^ (0xD6E8'FEB8'6659'FD93ULL * (index + 1)));
        return r;
    }

    uint64_t next_u64() { return mix(key_ + mix(counter_++)); }

    // [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // inclusive range; bias is O(range/2^64), far below statistical resolution
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = uint64_t(hi - lo) + 1;
        return lo + int64_t(next_u64() % span);
    }

    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    Eigen::VectorXd normal_vec(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    static uint64_t fnv1a(std::string_view s) {
        uint64_t h = 0xCBF2'9CE4'8422'2325ULL;
        for (char c : s) {
            h ^= uint64_t(uint8_t(c));
            h *= 0x0000'0100'0000'01B3ULL;
        }
        return h;
    }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9E37'79B9'7F4A'7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58'476D'1CE4'E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D0'49BB'1331'11EBULL;
        return z ^ (z >> 31);
    }

    uint64_t key_;
    uint64_t counter_;
};

}  // namespace longctx
