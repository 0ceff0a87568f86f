#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace stamesh {

// Deterministic PRNG used everywhere instead of <random> distributions, whose
// output is implementation-defined. Same seed -> same stream on any platform.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Mix an ordered list of labels into one seed (stream derivation).
inline uint64_t mix_seed(std::initializer_list<uint64_t> parts) {
    uint64_t s = 0x8f1bbcdcbfa53e0bULL;
    for (uint64_t p : parts) {
        s ^= p + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
        splitmix64(s);
    }
    return s;
}

class Rng {
public:
    explicit Rng(uint64_t seed = 1) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
        gauss_cached_ = false;
    }

    // xoshiro256**
    uint64_t next_u64() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0, bound) — modulo bias is irrelevant at our bounds (< 2^32)
    uint64_t uniform_u64(uint64_t bound) { return bound ? next_u64() % bound : 0; }

    int uniform_int(int lo, int hi) {  // inclusive range
        return lo + static_cast<int>(uniform_u64(static_cast<uint64_t>(hi - lo + 1)));
    }

    double uniform_real() {  // [0,1)
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform_real(double lo, double hi) { return lo + (hi - lo) * uniform_real(); }

    double gaussian() {  // standard normal, Box-Muller with cached spare
        if (gauss_cached_) {
            gauss_cached_ = false;
            return gauss_spare_;
        }
        double u1 = uniform_real();
        double u2 = uniform_real();
        if (u1 < 1e-300) u1 = 1e-300;
        double mag = std::sqrt(-2.0 * std::log(u1));
        gauss_spare_ = mag * std::sin(6.283185307179586476925287 * u2);
        gauss_cached_ = true;
        return mag * std::cos(6.283185307179586476925287 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_u64(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct values from 0..n-1, in draw order
    std::vector<int> sample_distinct(int n, int k) {
        std::vector<int> pool(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
        std::vector<int> out;
        out.reserve(static_cast<size_t>(k));
        for (int i = 0; i < k && !pool.empty(); ++i) {
            size_t j = static_cast<size_t>(uniform_u64(pool.size()));
            out.push_back(pool[j]);
            pool[j] = pool.back();
            pool.pop_back();
        }
        return out;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4]{};
    double gauss_spare_ = 0.0;
    bool gauss_cached_ = false;
};

}  // namespace stamesh
