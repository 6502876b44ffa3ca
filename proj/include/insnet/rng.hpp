#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "insnet/errors.hpp"

namespace insnet {

// Deterministic, platform-independent random stream (xoshiro256++ core,
// splitmix64 seeding). The standard <random> distributions are
// implementation-defined, so sampling is done by hand here; identical seeds
// give bitwise-identical streams everywhere.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& word : state_) {
            word = splitmix64(x);
        }
        have_spare_ = false;
        spare_ = 0.0;
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

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        if (n == 0) {
            throw ValueError("Rng::below: n must be positive");
        }
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t r = next_u64();
        while (r >= limit) {
            r = next_u64();
        }
        return r % n;
    }

    // Standard normal via Box-Muller (spare value cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        spare_ = mag * std::sin(two_pi * u2);
        have_spare_ = true;
        return mag * std::cos(two_pi * u2);
    }

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent child stream; used to derive per-iteration / per-shard
    // streams so that resumed runs replay the exact same randomness.
    Rng child(uint64_t salt) const {
        uint64_t x = state_[0] ^ (salt * 0x9e3779b97f4a7c15ULL);
        Rng c(0);
        for (auto& word : c.state_) {
            word = splitmix64(x);
        }
        return c;
    }

    static Rng from_seed_and_stream(uint64_t seed, uint64_t stream) {
        return Rng(seed).child(stream + 1);
    }

    std::string state_string() const {
        std::string s;
        for (int i = 0; i < 4; ++i) {
            s += std::to_string(state_[i]);
            if (i < 3) s += ",";
        }
        return s;
    }

private:
    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    uint64_t state_[4] = {};
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace insnet
