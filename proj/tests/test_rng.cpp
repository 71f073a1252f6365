#include <doctest.h>

#include <cmath>
#include <vector>

#include "subsel/rng.hpp"

using namespace subsel;

TEST_CASE("identical keys replay the same sequence") {
    RngStream a = RngStream::derive(42, {1, 2});
    RngStream b = RngStream::derive(42, {1, 2});
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u32() == b.next_u32());
    }
}

TEST_CASE("distinct stream ids decorrelate") {
    RngStream a = RngStream::derive(42, {0, 0});
    RngStream b = RngStream::derive(42, {0, 1});
    RngStream c = RngStream::derive(42, {1, 0});
    int equal_ab = 0, equal_ac = 0;
    for (int i = 0; i < 64; ++i) {
        const std::uint32_t xa = a.next_u32();
        if (xa == b.next_u32()) ++equal_ab;
        if (xa == c.next_u32()) ++equal_ac;
    }
    CHECK(equal_ab <= 1);
    CHECK(equal_ac <= 1);
}

TEST_CASE("uniform lies strictly inside (0,1) with mean near 1/2") {
    RngStream rng = RngStream::derive(7, {0});
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    // 3-sigma band for the mean of U(0,1): sd = 1/sqrt(12 n)
    CHECK(std::abs(sum / n - 0.5) < 3.0 / std::sqrt(12.0 * n));
}

TEST_CASE("normal draws have the right first two moments") {
    RngStream rng = RngStream::derive(11, {3});
    const int n = 100000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sum_sq += z * z;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("uniform_int stays in range and covers it") {
    RngStream rng = RngStream::derive(5, {9});
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 7000; ++i) {
        const std::uint64_t v = rng.uniform_int(7);
        REQUIRE(v < 7);
        ++counts[static_cast<std::size_t>(v)];
    }
    for (int c : counts) {
        CHECK(c > 700);  // grossly unbalanced would indicate a bias bug
    }
}
