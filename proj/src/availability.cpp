#include "stamesh/availability.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "stamesh/rng.hpp"

namespace stamesh {

BigUint::BigUint(uint64_t v) {
    while (v) {
        limbs_.push_back(static_cast<uint32_t>(v));
        v >>= 32;
    }
}

void BigUint::trim() {
    while (!limbs_.empty() && limbs_.back() == 0) limbs_.pop_back();
}

void BigUint::mul_small(uint32_t m) {
    uint64_t carry = 0;
    for (auto& l : limbs_) {
        uint64_t cur = static_cast<uint64_t>(l) * m + carry;
        l = static_cast<uint32_t>(cur);
        carry = cur >> 32;
    }
    while (carry) {
        limbs_.push_back(static_cast<uint32_t>(carry));
        carry >>= 32;
    }
    trim();
}

void BigUint::div_small_exact(uint32_t d) {
    uint64_t rem = 0;
    for (size_t i = limbs_.size(); i-- > 0;) {
        uint64_t cur = (rem << 32) | limbs_[i];
        limbs_[i] = static_cast<uint32_t>(cur / d);
        rem = cur % d;
    }
    trim();
}

void BigUint::add(const BigUint& other) {
    if (other.limbs_.size() > limbs_.size()) limbs_.resize(other.limbs_.size(), 0);
    uint64_t carry = 0;
    for (size_t i = 0; i < limbs_.size(); ++i) {
        uint64_t cur = static_cast<uint64_t>(limbs_[i]) + carry +
                       (i < other.limbs_.size() ? other.limbs_[i] : 0);
        limbs_[i] = static_cast<uint32_t>(cur);
        carry = cur >> 32;
    }
    if (carry) limbs_.push_back(static_cast<uint32_t>(carry));
}

BigUint BigUint::mul(const BigUint& other) const {
    BigUint out;
    if (is_zero() || other.is_zero()) return out;
    out.limbs_.assign(limbs_.size() + other.limbs_.size(), 0);
    for (size_t i = 0; i < limbs_.size(); ++i) {
        uint64_t carry = 0;
        for (size_t j = 0; j < other.limbs_.size(); ++j) {
            uint64_t cur = static_cast<uint64_t>(limbs_[i]) * other.limbs_[j] +
                           out.limbs_[i + j] + carry;
            out.limbs_[i + j] = static_cast<uint32_t>(cur);
            carry = cur >> 32;
        }
        size_t pos = i + other.limbs_.size();
        while (carry) {
            uint64_t cur = static_cast<uint64_t>(out.limbs_[pos]) + carry;
            out.limbs_[pos] = static_cast<uint32_t>(cur);
            carry = cur >> 32;
            ++pos;
        }
    }
    out.trim();
    return out;
}

int BigUint::bit_length() const {
    if (limbs_.empty()) return 0;
    int bits = static_cast<int>(limbs_.size() - 1) * 32;
    uint32_t top = limbs_.back();
    while (top) {
        ++bits;
        top >>= 1;
    }
    return bits;
}

double BigUint::mantissa(int* exp2) const {
    // value = m * 2^exp2 with m in [0.5, 1)
    if (limbs_.empty()) {
        *exp2 = 0;
        return 0.0;
    }
    uint64_t top = 0;
    size_t captured = 0;
    for (size_t i = limbs_.size(); i-- > 0 && captured < 2;) {
        top = (top << 32) | limbs_[i];
        ++captured;
    }
    int skipped_bits = static_cast<int>((limbs_.size() - captured) * 32);
    int top_bits = 64 - std::countl_zero(top);
    *exp2 = top_bits + skipped_bits;
    return static_cast<double>(top) * std::ldexp(1.0, -top_bits);
}

double BigUint::to_double() const {
    int e = 0;
    double m = mantissa(&e);
    return std::ldexp(m, e);
}

double BigUint::ratio(const BigUint& num, const BigUint& den) {
    if (num.is_zero()) return 0.0;
    int en = 0, ed = 0;
    double mn = num.mantissa(&en);
    double md = den.mantissa(&ed);
    return std::ldexp(mn / md, en - ed);
}

BigUint binomial(int n, int k) {
    if (k < 0 || k > n || n < 0) return BigUint();
    if (k > n - k) k = n - k;
    BigUint acc(1);
    for (int i = 1; i <= k; ++i) {
        acc.mul_small(static_cast<uint32_t>(n - k + i));
        acc.div_small_exact(static_cast<uint32_t>(i));
    }
    return acc;
}

static void check_params(const AvailabilityParams& p) {
    if (p.S < 1 || p.k < 1 || p.k > p.S || p.F < 0 || p.F > p.S || p.f < 0 || p.G < 1)
        throw InvalidParameter("availability: need 0 <= F <= S, 1 <= k <= S, f >= 0, G >= 1");
}

double availability(const AvailabilityParams& p) {
    check_params(p);
    if (p.F <= p.f) return 1.0;
    BigUint sum;
    int lo = p.k + p.F - p.S;
    if (lo < 0) lo = 0;
    for (int i = lo; i <= p.f; ++i) {
        BigUint term = binomial(p.S - p.F, p.k - i).mul(binomial(p.F, i));
        sum.add(term);
    }
    double per_group = BigUint::ratio(sum, binomial(p.S, p.k));
    if (per_group > 1.0) per_group = 1.0;
    return std::pow(per_group, p.G);
}

MonteCarloResult availability_montecarlo(const AvailabilityParams& p, uint64_t trials, uint64_t seed) {
    check_params(p);
    if (trials < 1) throw InvalidParameter("montecarlo: trials must be >= 1");
    Rng rng(mix_seed({seed, 0xA5A5ULL}));
    std::vector<uint8_t> failed(static_cast<size_t>(p.S), 0);
    uint64_t ok = 0;
    for (uint64_t t = 0; t < trials; ++t) {
        std::fill(failed.begin(), failed.end(), 0);
        for (int n : rng.sample_distinct(p.S, p.F)) failed[static_cast<size_t>(n)] = 1;
        bool all_ok = true;
        for (int g = 0; g < p.G && all_ok; ++g) {
            int bad = 0;
            for (int n : rng.sample_distinct(p.S, p.k)) bad += failed[static_cast<size_t>(n)];
            if (bad > p.f) all_ok = false;
        }
        if (all_ok) ++ok;
    }
    MonteCarloResult r;
    r.trials = trials;
    r.estimate = static_cast<double>(ok) / static_cast<double>(trials);
    r.stderr_ = std::sqrt(r.estimate * (1.0 - r.estimate) / static_cast<double>(trials));
    return r;
}

}  // namespace stamesh
