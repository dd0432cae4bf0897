#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "qexp/functions.hpp"
#include "qexp/rng.hpp"

using qexp::j_gamma;
using qexp::j_gamma_deriv;
using qexp::j_gamma_quotient;
using qexp::truncate_phi;
using qexp::truncate_phi_deriv;

namespace {
double rel_gap(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / scale;
}
}  // namespace

TEST_CASE("exponential compensator profile: frozen values") {
    // (e - 2), (e^2 - 3)/2, e^{-1}: all hand-derived from the definition.
    CHECK(rel_gap(j_gamma(1.0, 1.0), 0.7182818284590452) < 1e-15);
    CHECK(rel_gap(j_gamma(2.0, 1.0), 2.1945280494653252) < 1e-15);
    CHECK(rel_gap(j_gamma(1.0, -1.0), 0.3678794411714423) < 1e-15);
    CHECK(j_gamma(1.0, 0.0) == 0.0);
    CHECK(j_gamma(0.5, 0.0) == 0.0);
}

TEST_CASE("exponential compensator profile: small-argument accuracy") {
    // j(u) ~ u^2/2 * (1 + gamma*u/3) near zero; the direct expression loses
    // all relative accuracy there, the implementation must not.
    for (double u : {1e-4, 1e-6, 1e-8, 1e-10, -1e-6, -1e-9}) {
        const double lead = 0.5 * u * u;
        const double ratio = j_gamma(1.0, u) / lead;
        CHECK(std::abs(ratio - (1.0 + u / 3.0 + u * u / 12.0)) < 1e-12);
    }
}

TEST_CASE("exponential compensator profile: doubled-coefficient identity") {
    // 2g * j_{2g}(x) = (e^{gx}-1)^2 + 2g * j_g(x), checked at 1e-12 relative
    // over dense grids; at g=1, x=1 both sides equal e^2 - 3.
    const double lhs_ref = 2.0 * j_gamma(2.0, 1.0);
    CHECK(rel_gap(lhs_ref, 4.3890560989306504) < 1e-14);

    for (double g : {0.5, 1.0, 2.0}) {
        double worst = 0.0;
        const int n = 10000;
        for (int i = 0; i <= n; ++i) {
            const double x = -5.0 + 10.0 * i / n;
            const double lhs = 2.0 * g * j_gamma(2.0 * g, x);
            const double e1 = std::expm1(g * x);
            const double rhs = e1 * e1 + 2.0 * g * j_gamma(g, x);
            worst = std::max(worst, rel_gap(lhs, rhs));
        }
        CHECK(worst < 1e-12);
    }
}

TEST_CASE("exponential compensator profile: two-sided square domination") {
    // (e^x - 1)^2 + (e^{-x} - 1)^2 >= x^2 with equality only at x = 0.
    const int n = 10000;
    for (int i = 0; i <= n; ++i) {
        const double x = -5.0 + 10.0 * i / n;
        const double a = std::expm1(x);
        const double b = std::expm1(-x);
        CHECK(a * a + b * b >= x * x - 1e-12 * std::max(1.0, x * x));
    }
}

TEST_CASE("exponential compensator profile: properties") {
    qexp::CounterRng rng(91);
    for (int i = 0; i < 2000; ++i) {
        const double g = 0.25 + 3.0 * rng.uniform(i, 0, 1);
        const double x = -4.0 + 8.0 * rng.uniform(i, 1, 1);
        const double h = 1e-3;

        CHECK(j_gamma(g, x) >= 0.0);
        // convexity via second difference
        const double d2 = j_gamma(g, x - h) - 2.0 * j_gamma(g, x) + j_gamma(g, x + h);
        CHECK(d2 >= -1e-12);
        // scaling super-additivity: j(k x) >= k j(x) for k >= 1
        const double k = 1.0 + 4.0 * rng.uniform(i, 2, 1);
        CHECK(j_gamma(g, k * x) >= k * j_gamma(g, x) - 1e-12 * (1.0 + j_gamma(g, k * x)));
        // derivative consistency
        const double fd = (j_gamma(g, x + h) - j_gamma(g, x - h)) / (2.0 * h);
        CHECK(std::abs(fd - j_gamma_deriv(g, x)) < 5e-4 * (1.0 + std::abs(fd)));
    }
}

TEST_CASE("exponential compensator profile: difference quotient bounds") {
    qexp::CounterRng rng(92);
    for (int i = 0; i < 2000; ++i) {
        const double g = 0.5 + 2.0 * rng.uniform(i, 0, 2);
        const double a = -2.0 + 4.0 * rng.uniform(i, 1, 2);
        const double b = -2.0 + 4.0 * rng.uniform(i, 2, 2);
        const double m = std::max(std::abs(a), std::abs(b));
        const double q = j_gamma_quotient(g, a, b);
        CHECK(q >= std::expm1(-g * m) - 1e-12);
        CHECK(q <= std::expm1(g * m) + 1e-12);
        CHECK(q > -1.0);
    }
    CHECK(j_gamma_quotient(1.0, 0.3, 0.3) == std::expm1(0.3));
}

TEST_CASE("smooth truncation: plateau and identity regions are exact") {
    CHECK(truncate_phi(1.0, 2.0) == 1.0);
    CHECK(truncate_phi(-2.0, 2.0) == -2.0);
    CHECK(truncate_phi(2.0, 2.0) == 2.0);
    CHECK(truncate_phi(5.0, 2.0) == 3.0);
    CHECK(truncate_phi(-5.0, 2.0) == -3.0);
    CHECK(truncate_phi(4.0, 2.0) == 3.0);  // boundary of the plateau
    CHECK(truncate_phi(0.0, 0.0) == 0.0);

    const double mid = truncate_phi(3.0, 2.0);
    CHECK(mid > 2.0);
    CHECK(mid < 3.0);
}

TEST_CASE("smooth truncation: odd, monotone, unit-slope bound") {
    const double m = 2.0;
    const int n = 10000;
    double prev = truncate_phi(-6.0, m);
    for (int i = 1; i <= n; ++i) {
        const double x = -6.0 + 12.0 * i / n;
        const double v = truncate_phi(x, m);
        CHECK(v >= prev - 1e-15);
        CHECK(std::abs(v + truncate_phi(-x, m)) < 1e-15);
        CHECK(std::abs(v) <= m + 1.0);
        // finite-difference slope against both the bound and the analytic form
        const double h = 6e-4;
        const double fd = (truncate_phi(x + h, m) - truncate_phi(x - h, m)) / (2.0 * h);
        CHECK(fd <= 1.0 + 1e-9);
        CHECK(fd >= -1e-9);
        CHECK(std::abs(fd - truncate_phi_deriv(x, m)) < 1e-6);
        prev = v;
    }
}

TEST_CASE("smooth truncation: C1 joins") {
    const double m = 1.5;
    for (double x0 : {m, m + 2.0, -m, -(m + 2.0)}) {
        const double eps = 1e-9;
        CHECK(std::abs(truncate_phi(x0 - eps, m) - truncate_phi(x0 + eps, m)) < 1e-8);
        CHECK(std::abs(truncate_phi_deriv(x0 - eps, m) - truncate_phi_deriv(x0 + eps, m)) < 1e-6);
    }
}
