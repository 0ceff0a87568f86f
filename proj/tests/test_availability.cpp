#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "stamesh/availability.hpp"

using namespace stamesh;

namespace {

// Exhaustive oracle for G=1 on small S: enumerate every k-subset against every
// F-subset of failures and count pairs where the group has <= f failed members.
double exhaustive_single_group(int S, int k, int f, int F) {
    std::vector<int> group(static_cast<size_t>(k)), fail(static_cast<size_t>(F));
    uint64_t good = 0, total = 0;

    std::vector<std::vector<int>> groups, fails;
    std::vector<int> cur;
    std::function<void(int, int, std::vector<std::vector<int>>&)> gen =
        [&](int start, int left, std::vector<std::vector<int>>& out) {
            if (left == 0) {
                out.push_back(cur);
                return;
            }
            for (int i = start; i <= S - left; ++i) {
                cur.push_back(i);
                gen(i + 1, left - 1, out);
                cur.pop_back();
            }
        };
    gen(0, k, groups);
    gen(0, F, fails);
    (void)group;
    (void)fail;
    for (const auto& g : groups)
        for (const auto& fs : fails) {
            int bad = 0;
            for (int m : g)
                if (std::find(fs.begin(), fs.end(), m) != fs.end()) ++bad;
            if (bad <= f) ++good;
            ++total;
        }
    return static_cast<double>(good) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("bigint binomials") {
    CHECK(binomial(0, 0).to_double() == doctest::Approx(1.0));
    CHECK(binomial(10, 3).to_double() == doctest::Approx(120.0));
    CHECK(binomial(52, 5).to_double() == doctest::Approx(2598960.0));
    CHECK(binomial(5, 7).is_zero());
    CHECK(binomial(5, -1).is_zero());
    // C(1000,11) = 23706860441577319154916000 — exceeds 64 bits
    double big = binomial(1000, 11).to_double();
    CHECK(big == doctest::Approx(2.370686044157732e25).epsilon(1e-9));
    // ratio of equal values is exactly 1
    CHECK(BigUint::ratio(binomial(300, 150), binomial(300, 150)) == doctest::Approx(1.0));
}

TEST_CASE("availability is exactly 1 when F <= f") {
    AvailabilityParams p{100, 30, 11, 5, 0};
    for (int F = 0; F <= 5; ++F) {
        p.F = F;
        CHECK(availability(p) == 1.0);
    }
}

TEST_CASE("availability matches exhaustive enumeration on small instances") {
    for (int F : {2, 3, 5}) {
        AvailabilityParams p{10, 1, 3, 1, F};
        double formula = availability(p);
        double oracle = exhaustive_single_group(10, 3, 1, F);
        CHECK(formula == doctest::Approx(oracle).epsilon(1e-12));
    }
    AvailabilityParams p2{8, 1, 5, 2, 4};
    CHECK(availability(p2) == doctest::Approx(exhaustive_single_group(8, 5, 2, 4)).epsilon(1e-12));
}

TEST_CASE("availability monte carlo agreement") {
    // a 20-point grid of parameters; estimate within 4 standard errors
    int checked = 0;
    for (int S : {30, 60}) {
        for (int f : {1, 2}) {
            int k = 2 * f + 1;
            for (int G : {3, 10}) {
                for (int F : {f + 1, f + 3, 2 * f + 4}) {
                    if (checked >= 20) break;
                    AvailabilityParams p{S, G, k, f, F};
                    double exact = availability(p);
                    auto mc = availability_montecarlo(p, 100000, 77);
                    double slack = 4.0 * std::max(mc.stderr_, 1e-4);
                    CHECK(std::abs(mc.estimate - exact) < slack);
                    ++checked;
                }
            }
        }
    }
    CHECK(checked >= 12);
}

TEST_CASE("montecarlo F=0 is exactly 1") {
    AvailabilityParams p{20, 5, 3, 1, 0};
    auto mc = availability_montecarlo(p, 1000, 3);
    CHECK(mc.estimate == 1.0);
}

TEST_CASE("availability monotonicity") {
    AvailabilityParams p{60, 8, 5, 2, 0};
    double prev = 1.0;
    for (int F = 0; F <= 30; F += 3) {
        p.F = F;
        double v = availability(p);
        CHECK(v <= prev + 1e-12);
        prev = v;
    }
    // non-increasing in G
    double prev_g = 1.0;
    for (int G = 1; G <= 40; G += 5) {
        AvailabilityParams q{60, G, 5, 2, 8};
        double v = availability(q);
        CHECK(v <= prev_g + 1e-12);
        prev_g = v;
    }
    // non-decreasing in f at fixed k
    double prev_f = 0.0;
    for (int f = 0; f <= 4; ++f) {
        AvailabilityParams q{60, 8, 5, f, 8};
        double v = availability(q);
        CHECK(v >= prev_f - 1e-12);
        prev_f = v;
    }
}

TEST_CASE("availability rejects invalid parameters") {
    CHECK_THROWS_AS(availability({10, 1, 11, 1, 0}), InvalidParameter);
    CHECK_THROWS_AS(availability({10, 1, 3, 1, 11}), InvalidParameter);
    CHECK_THROWS_AS(availability_montecarlo({10, 1, 3, 1, 2}, 0, 1), InvalidParameter);
}
