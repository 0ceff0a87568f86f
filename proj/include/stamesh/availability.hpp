#pragma once

#include <cstdint>
#include <vector>

#include "stamesh/model.hpp"

namespace stamesh {

// Unsigned big integer, little-endian 32-bit limbs. Just enough arithmetic
// for exact binomial coefficients at S up to a few thousand.
class BigUint {
public:
    BigUint() = default;
    explicit BigUint(uint64_t v);

    bool is_zero() const { return limbs_.empty(); }
    void mul_small(uint32_t m);
    void div_small_exact(uint32_t d);  // caller guarantees divisibility
    void add(const BigUint& other);
    BigUint mul(const BigUint& other) const;
    int bit_length() const;

    // value ~= mantissa * 2^exp2 with mantissa in [0.5, 1)
    double mantissa(int* exp2) const;

    double to_double() const;
    static double ratio(const BigUint& num, const BigUint& den);  // num/den

private:
    void trim();
    std::vector<uint32_t> limbs_;
};

BigUint binomial(int n, int k);  // 0 when k<0 or k>n

struct AvailabilityParams {
    int S = 100;  // smart node count
    int G = 30;   // group count
    int k = 11;   // group size
    int f = 5;    // failure budget
    int F = 0;    // simultaneous failures
};

// P(all G independently-sampled k-subsets contain at most f of the F failed
// nodes). Exactly 1.0 when F <= f. Exact big-integer binomials, converted to
// floating point only at the final ratio.
double availability(const AvailabilityParams& p);

struct MonteCarloResult {
    double estimate = 0.0;
    double stderr_ = 0.0;
    uint64_t trials = 0;
};

MonteCarloResult availability_montecarlo(const AvailabilityParams& p, uint64_t trials, uint64_t seed);

}  // namespace stamesh
