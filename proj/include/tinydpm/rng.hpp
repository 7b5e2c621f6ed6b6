#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tinydpm/errors.hpp"

namespace tinydpm {

// Counter-based PRNG: Philox4x32-10. The key is derived from the 64-bit
// seed, the upper counter words carry a stream id, the lower words are the
// block index. Identical (seed, stream) always yields the identical value
// sequence, and streams can be split without coordination.
//
// Gaussian draws use the Box-Muller transform on two uniform doubles built
// from 64 bits each; the second value of each pair is cached so the stream
// advances by exactly one uniform pair per two normals.
class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t stream = 0)
        : seed_(seed), stream_(stream) {
        key_[0] = static_cast<uint32_t>(seed);
        key_[1] = static_cast<uint32_t>(seed >> 32);
    }

    uint64_t seed() const { return seed_; }
    uint64_t stream() const { return stream_; }

    // Derives an independent stream. Different ids map to disjoint counter
    // prefixes under the same key, so parent and children never collide.
    Rng split(uint64_t id) const {
        return Rng(seed_, mix64(stream_ ^ (0x9e3779b97f4a7c15ULL + id)));
    }

    uint32_t next_u32() {
        if (buf_pos_ == 4) {
            philox_block();
            buf_pos_ = 0;
        }
        return buf_[buf_pos_++];
    }

    uint64_t next_u64() {
        uint64_t lo = next_u32();
        uint64_t hi = next_u32();
        return (hi << 32) | lo;
    }

    // Uniform in (0, 1]: never returns 0 so log() is always finite.
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    double next_normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = next_uniform();
        double u2 = next_uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    // Unbiased-enough integer in [lo, hi] via 128-bit multiply-shift.
    int64_t next_int(int64_t lo, int64_t hi) {
        if (lo > hi) throw UsageError("Rng::next_int: empty range");
        uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
        uint64_t v = static_cast<uint64_t>(
            (static_cast<__uint128_t>(next_u64()) * range) >> 64);
        return lo + static_cast<int64_t>(v);
    }

    template <class It>
    void shuffle(It first, It last) {
        auto n = last - first;
        for (decltype(n) i = n - 1; i > 0; --i) {
            auto j = next_int(0, i);
            std::swap(first[i], first[j]);
        }
    }

private:
    static uint64_t mix64(uint64_t x) {
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return x;
    }

    static void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
        uint64_t p = static_cast<uint64_t>(a) * b;
        hi = static_cast<uint32_t>(p >> 32);
        lo = static_cast<uint32_t>(p);
    }

    void philox_block() {
        uint32_t c0 = static_cast<uint32_t>(counter_);
        uint32_t c1 = static_cast<uint32_t>(counter_ >> 32);
        uint32_t c2 = static_cast<uint32_t>(stream_);
        uint32_t c3 = static_cast<uint32_t>(stream_ >> 32);
        uint32_t k0 = key_[0], k1 = key_[1];
        for (int round = 0; round < 10; ++round) {
            uint32_t hi0, lo0, hi1, lo1;
            mulhilo(0xD2511F53u, c0, hi0, lo0);
            mulhilo(0xCD9E8D57u, c2, hi1, lo1);
            uint32_t n0 = hi1 ^ c1 ^ k0;
            uint32_t n1 = lo1;
            uint32_t n2 = hi0 ^ c3 ^ k1;
            uint32_t n3 = lo0;
            c0 = n0; c1 = n1; c2 = n2; c3 = n3;
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
        buf_[0] = c0; buf_[1] = c1; buf_[2] = c2; buf_[3] = c3;
        ++counter_;
    }

    uint64_t seed_;
    uint64_t stream_;
    uint32_t key_[2];
    uint64_t counter_ = 0;
    uint32_t buf_[4] = {0, 0, 0, 0};
    int buf_pos_ = 4;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace tinydpm
