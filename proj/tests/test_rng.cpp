#include "grd/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace grd;

TEST_CASE("rng streams are reproducible") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const auto x = a();
        CHECK(x == b());
        (void)c();
    }
    CHECK(Rng(1)() != Rng(2)());
}

TEST_CASE("derive_seed separates labels and indices") {
    CHECK(derive_seed(7, "a") == derive_seed(7, "a"));
    CHECK(derive_seed(7, "a") != derive_seed(7, "b"));
    CHECK(derive_seed(7, "a") != derive_seed(8, "a"));
    CHECK(derive_seed(7, std::uint64_t{0}) != derive_seed(7, std::uint64_t{1}));
}

TEST_CASE("uniform and normal moments") {
    Rng rng(3);
    const int n = 200000;
    double s = 0, s2 = 0, z = 0, z2 = 0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK_FALSE((u < 0.0 || u >= 1.0));
        s += u;
        s2 += u * u;
        const double g = rng.normal();
        z += g;
        z2 += g * g;
    }
    CHECK(s / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(s2 / n - (s / n) * (s / n) == doctest::Approx(1.0 / 12).epsilon(0.02));
    CHECK(std::abs(z / n) < 0.01);
    CHECK(z2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("uniform_int covers the closed range") {
    Rng rng(5);
    std::vector<int> hits(5, 0);
    for (int i = 0; i < 5000; ++i) {
        const int v = rng.uniform_int(3, 7);
        REQUIRE(v >= 3);
        REQUIRE(v <= 7);
        ++hits[v - 3];
    }
    for (int h : hits) CHECK(h > 800);
}

TEST_CASE("categorical follows weights") {
    Rng rng(9);
    const std::vector<double> w{0.0, 1.0, 3.0};
    std::vector<int> hits(3, 0);
    for (int i = 0; i < 40000; ++i) ++hits[rng.categorical(w)];
    CHECK(hits[0] == 0);
    CHECK(hits[2] / static_cast<double>(hits[1]) == doctest::Approx(3.0).epsilon(0.05));
}
