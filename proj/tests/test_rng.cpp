#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <set>

#include "qexp/rng.hpp"

using qexp::CounterRng;

TEST_CASE("counter rng: pure function of seed and counters") {
    CounterRng a(42), b(42), c(43);
    CHECK(a.bits(1, 2, 3) == b.bits(1, 2, 3));
    CHECK(a.uniform(7, 8, 9) == b.uniform(7, 8, 9));
    CHECK(a.bits(1, 2, 3) != c.bits(1, 2, 3));
    CHECK(a.bits(1, 2, 3) != a.bits(1, 2, 4));
    CHECK(a.bits(1, 2, 3) != a.bits(2, 1, 3));
}

TEST_CASE("counter rng: uniform draws live strictly inside (0,1)") {
    CounterRng rng(7);
    double mn = 1.0, mx = 0.0, sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform(i, 0, 0);
        mn = std::min(mn, u);
        mx = std::max(mx, u);
        sum += u;
    }
    CHECK(mn > 0.0);
    CHECK(mx < 1.0);
    // mean 1/2 within 3 standard errors (sd = 1/sqrt(12))
    CHECK(std::abs(sum / n - 0.5) < 3.0 * (1.0 / std::sqrt(12.0)) / std::sqrt(double(n)));
}

TEST_CASE("counter rng: inverse normal is a faithful quantile function") {
    // Round-trip Phi(Phi^{-1}(p)) = p near machine precision after polishing.
    for (double p : {1e-10, 1e-6, 0.02, 0.3, 0.5, 0.7, 0.97, 1.0 - 1e-7}) {
        const double x = CounterRng::inverse_normal_cdf(p);
        const double back = 0.5 * std::erfc(-x / std::sqrt(2.0));
        CHECK(std::abs(back - p) < 1e-12 * std::max(p, 1.0 - p) + 1e-16);
    }
    CHECK(CounterRng::inverse_normal_cdf(0.5) == 0.0);
    CHECK(CounterRng::inverse_normal_cdf(0.975) == Catch::Approx(1.959963984540054).epsilon(1e-12));
}

TEST_CASE("counter rng: normal moments") {
    CounterRng rng(11);
    const int n = 200000;
    double s1 = 0.0, s2 = 0.0, s4 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.normal(i, 1, 2);
        s1 += g;
        s2 += g * g;
        s4 += g * g * g * g;
    }
    s1 /= n;
    s2 /= n;
    s4 /= n;
    CHECK(std::abs(s1) < 3.0 / std::sqrt(double(n)));
    CHECK(std::abs(s2 - 1.0) < 3.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(s4 - 3.0) < 3.0 * std::sqrt(96.0 / n));
}

TEST_CASE("counter rng: poisson moments and determinism") {
    CounterRng rng(13);
    const double mean = 3.0;
    const int n = 100000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const int k = rng.poisson(mean, i, 0, 5);
        s1 += k;
        s2 += double(k) * k;
    }
    s1 /= n;
    s2 = s2 / n - s1 * s1;
    CHECK(std::abs(s1 - mean) < 3.0 * std::sqrt(mean / n));
    CHECK(std::abs(s2 - mean) < 0.1);
    CHECK(rng.poisson(mean, 5, 6, 7) == rng.poisson(mean, 5, 6, 7));
    CHECK(rng.poisson(0.0, 1, 2, 3) == 0);
}
