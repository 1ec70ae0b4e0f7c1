// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "effortvae/rng.hpp"

using effortvae::RngStream;

TEST_CASE("rng: draws are a pure function of seed and counter") {
    RngStream a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    RngStream resumed(42, a.counter());
    CHECK(resumed.next_u64() == a.next_u64());
    CHECK(RngStream(1).next_u64() != RngStream(2).next_u64());
}

TEST_CASE("rng: forks are independent of the parent position") {
    RngStream a(7);
    const auto f0 = a.fork(3).next_u64();
    a.next_u64();
    CHECK(a.fork(3).next_u64() == f0);
    CHECK(a.fork(4).next_u64() != f0);
}

TEST_CASE("rng: uniform and normal moments") {
    RngStream r(11);
    const int n = 200000;
    double su = 0, sn = 0, sn2 = 0;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform();
        CHECK((u >= 0.0 && u < 1.0));
        su += u;
        const double z = r.normal();
        sn += z;
        sn2 += z * z;
    }
    CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(std::abs(sn / n) < 0.01);
    CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("rng: below is unbiased and in range") {
    RngStream r(5);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) {
        const auto v = r.below(7);
        REQUIRE(v < 7);
        ++counts[v];
    }
    for (int c : counts) CHECK(std::abs(c - 10000) < 500);
}

TEST_CASE("rng: shuffle is a permutation and reproducible") {
    std::vector<int> a(50), b;
    std::iota(a.begin(), a.end(), 0);
    b = a;
    RngStream r1(9), r2(9);
    effortvae::shuffle(a.begin(), a.end(), r1);
    effortvae::shuffle(b.begin(), b.end(), r2);
    CHECK(a == b);
    std::vector<int> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
}
