#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>

namespace ffdc {

// xoshiro256++ with splitmix64 seeding. Hand-rolled distributions so that
// streams are byte-stable across platforms and standard-library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& word : s_) word = splitmix64(x);
        spare_valid_ = false;
    }

    // Deterministic named substream: mix(root, fnv1a(name), index).
    static Rng stream(uint64_t root, std::string_view name, uint64_t index = 0) {
        uint64_t h = fnv1a(name);
        uint64_t x = root ^ (h + 0x9e3779b97f4a7c15ULL);
        x = splitmix64(x);
        x ^= index + 0x632be59bd9b4e019ULL;
        x = splitmix64(x);
        return Rng(x);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Inclusive integer range, rejection-sampled so every value is equally likely.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        if (lo > hi) throw std::invalid_argument("uniform_int: empty range");
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<int64_t>(next_u64());  // full 64-bit range
        const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return lo + static_cast<int64_t>(x % span);
    }

    // Box-Muller with cached spare.
    double normal(double mean = 0.0, double stddev = 1.0) {
        if (spare_valid_) {
            spare_valid_ = false;
            return mean + stddev * spare_;
        }
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        spare_ = mag * std::sin(two_pi * u2);
        spare_valid_ = true;
        return mean + stddev * mag * std::cos(two_pi * u2);
    }

    static uint64_t fnv1a(std::string_view s) {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    static uint64_t splitmix64(uint64_t& state) {
        state += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
    double spare_ = 0.0;
    bool spare_valid_ = false;
};

}  // namespace ffdc
