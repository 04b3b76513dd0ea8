#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

namespace miniwm {

// xoshiro256++ with splitmix64 seeding. Self-contained so that streams are
// reproducible across platforms and trivially serializable (4 words).
class Rng {
public:
    Rng() : Rng(0) {}

    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& w : state_) w = splitmix64(x);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        // Rejection-free modulo is biased for huge n; fine for our ranges,
        // but keep the multiply-shift trick for uniformity.
        return uint64_t((__uint128_t(next_u64()) * n) >> 64);
    }

    int64_t range(int64_t lo, int64_t hi_inclusive) {
        return lo + int64_t(below(uint64_t(hi_inclusive - lo + 1)));
    }

    // Box-Muller, one output per pair of uniforms (no cached spare so that
    // the serialized state fully determines the stream).
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Derive an independent stream; does not advance this generator.
    Rng fork(uint64_t stream) const {
        uint64_t x = state_[0] ^ rotl(state_[3], 7) ^ (stream * 0x9E3779B97F4A7C15ULL);
        Rng r;
        for (auto& w : r.state_) w = splitmix64(x);
        return r;
    }

    std::array<uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::array<uint64_t, 4> state_{};
};

// Stable 64-bit hash used for keying parameter init streams and content ids.
inline uint64_t fnv1a64(const std::string& s, uint64_t seed = 0xcbf29ce484222325ULL) {
    uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace miniwm
