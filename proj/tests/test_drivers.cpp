#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "qexp/driver.hpp"
#include "qexp/presets.hpp"

using namespace qexp;

namespace {
MarkSpec two_marks() { return MarkSpec({{0.5, -0.8}}, {{2.0, 1.0}}); }
}  // namespace

TEST_CASE("growth envelope check: zero driver is comfortably inside") {
    auto d = make_zero_driver(1, two_marks());
    auto rep = check_structure(d);
    CHECK(rep.passed());
    CHECK(rep.worst_upper >= 0.0);
    CHECK(rep.worst_lower >= 0.0);
}

TEST_CASE("growth envelope check: saturating driver has identically zero upper slack") {
    auto d = make_saturating_driver(1.0, 0.25, two_marks());
    SampleSpec spec;
    spec.n_points = 1024;
    auto rep = check_structure(d, spec);
    CHECK(rep.passed());
    CHECK(std::abs(rep.worst_upper) < 1e-12);
    CHECK(rep.worst_lower >= 0.0);
}

TEST_CASE("growth envelope check: doubled quadratic coefficient is flagged") {
    // f = g|z|^2 declared with envelope coefficient g: upper slack at
    // (y=0, z, psi=0) equals -(g/2)|z|^2.
    const double g = 1.0;
    DriverSpec d;
    d.name = "overdriven";
    d.dim_z = 1;
    d.f = [g](double, double, std::span<const double> z, std::span<const double>) {
        return g * z[0] * z[0];
    };
    d.structure = {0.0, 0.0, g};
    d.lipschitz_profile = [](double M) { return 2.0 * M; };

    const double z1[] = {1.0};
    const double env = 0.5 * g * z1[0] * z1[0];
    const double slack = env - d.f(0.0, 0.0, z1, {});
    CHECK(slack == Catch::Approx(-0.5 * g).margin(1e-15));

    auto rep = check_structure(d);
    CHECK(rep.violations > 0);
    CHECK(rep.worst_upper < -0.1);
    CHECK_FALSE(rep.passed());
}

TEST_CASE("growth envelope check: linear driver carries a valid envelope") {
    auto d = make_linear_driver(0.7, {0.4}, {0.4}, two_marks());
    SampleSpec spec;
    spec.n_points = 2048;
    spec.radius_psi = 4.0;  // stress the jump envelope far from the origin
    spec.radius_z = 5.0;
    auto rep = check_structure(d, spec);
    CHECK(rep.passed());
    CHECK_THROWS_AS(make_linear_driver(0.0, {0.0}, {1.0}, two_marks()), ModelError);
}

TEST_CASE("jump aggregation: finite sums and the frozen linear value") {
    auto marks = MarkSpec({{0.3}}, {{2.0}});
    auto agg = make_identity_aggregator();
    std::vector<double> psi{0.3};
    auto u = aggregate_jumps(agg, marks, 0.0, psi);
    REQUIRE(u.size() == 1);
    CHECK(u[0] == Catch::Approx(0.6).margin(1e-15));

    std::vector<double> zero{0.0};
    CHECK(aggregate_jumps(agg, marks, 0.0, zero)[0] == 0.0);
}

TEST_CASE("jump aggregation: Lipschitz transfer in the L2 mark norm") {
    auto marks = two_marks();
    JumpAggregatorSpec agg;
    agg.rho = [](double x) { return x; };
    agg.G = [](double, double v) { return std::sin(v); };
    agg.dG = [](double, double v) { return std::cos(v); };
    agg.dG_sup = [](double) { return 1.0; };

    const double rho_norm = aggregator_rho_norm(agg, marks);
    CHECK(rho_norm == Catch::Approx(std::sqrt(0.25 * 2.0 + 0.64 * 1.0)).epsilon(1e-14));

    CounterRng rng(21);
    for (int i = 0; i < 500; ++i) {
        std::vector<double> a(2), b(2), diff(2);
        for (int j = 0; j < 2; ++j) {
            a[j] = 3.0 * (2.0 * rng.uniform(i, j, 0) - 1.0);
            b[j] = 3.0 * (2.0 * rng.uniform(i, j, 1) - 1.0);
            diff[j] = a[j] - b[j];
        }
        const double ua = aggregate_jumps(agg, marks, 0.0, a)[0];
        const double ub = aggregate_jumps(agg, marks, 0.0, b)[0];
        CHECK(std::abs(ua - ub) <=
              rho_norm * agg.dG_sup(3.0) * mark_l2_norm(marks, diff) + 1e-12);
    }
}

TEST_CASE("jump monotonicity certificate: utility preset is exact") {
    auto d = make_exp_utility_driver(1.0, {0.5}, two_marks());
    SampleSpec spec;
    spec.n_points = 1024;
    auto rep = check_agamma(d, spec);
    CHECK(rep.passed());
    CHECK(rep.lower_constant > -1.0);
    // the telescoped quotient makes the inequality an identity
    CHECK(std::abs(rep.worst_inequality) < 1e-10);
}

TEST_CASE("jump monotonicity certificate: linear and saturating presets") {
    auto lin = make_linear_driver(0.0, {0.0}, {0.4}, two_marks());
    REQUIRE(lin.agamma.has_value());
    CHECK(check_agamma(lin).passed());

    // saturating preset only certifies when every mark has modulus >= 1
    auto sat_small = make_saturating_driver(1.0, 0.0, two_marks());
    CHECK_FALSE(sat_small.agamma.has_value());
    auto sat_big = make_saturating_driver(1.0, 0.0, MarkSpec({{1.5, -2.0}}, {{1.0, 0.5}}));
    REQUIRE(sat_big.agamma.has_value());
    CHECK(check_agamma(sat_big).passed());

    auto zero = make_zero_driver();
    CHECK_FALSE(check_agamma(zero).witness_present);
}

TEST_CASE("driver partials: analytic forms agree with finite differences") {
    auto d = make_exp_utility_driver(0.8, {0.3}, two_marks());
    auto fd = d;  // copy without analytic partials
    fd.df_dy = nullptr;
    fd.df_dz = nullptr;
    fd.df_dpsi = nullptr;

    CounterRng rng(31);
    for (int i = 0; i < 200; ++i) {
        const double t = rng.uniform(i, 0, 0);
        const double y = 2.0 * (2.0 * rng.uniform(i, 1, 0) - 1.0);
        std::vector<double> z{2.0 * (2.0 * rng.uniform(i, 2, 0) - 1.0)};
        std::vector<double> psi{2.0 * rng.uniform(i, 3, 0) - 1.0, 2.0 * rng.uniform(i, 4, 0) - 1.0};

        CHECK(std::abs(driver_dy(d, t, y, z, psi) - driver_dy(fd, t, y, z, psi)) < 1e-6);
        std::vector<double> za(1), zb(1), pa(2), pb(2);
        driver_dz(d, t, y, z, psi, za);
        driver_dz(fd, t, y, z, psi, zb);
        CHECK(std::abs(za[0] - zb[0]) < 1e-6);
        driver_dpsi(d, t, y, z, psi, pa);
        driver_dpsi(fd, t, y, z, psi, pb);
        CHECK(std::abs(pa[0] - pb[0]) < 1e-6);
        CHECK(std::abs(pa[1] - pb[1]) < 1e-6);
    }
}

TEST_CASE("driver presets: declared envelopes and flags") {
    auto util = make_exp_utility_driver(1.0, {0.5}, two_marks());
    CHECK(util.structure.l == Catch::Approx(0.125));
    CHECK(util.structure.gamma == Catch::Approx(2.0));
    CHECK(util.quadratic_growth);
    CHECK_FALSE(util.quadratic_radial.has_value());

    auto util0 = make_exp_utility_driver(1.0, {0.0}, two_marks());
    CHECK(util0.structure.l == 0.0);
    CHECK(util0.structure.gamma == Catch::Approx(1.0));
    CHECK(util0.quadratic_radial.has_value());

    auto sat = make_saturating_driver(2.0, 0.1, two_marks());
    CHECK(sat.structure.gamma == 2.0);
    CHECK(sat.structure.l == 0.1);
    CHECK(sat.quadratic_radial->coeff == 2.0);

    CHECK(make_zero_driver().lipschitz_profile(10.0) == 0.0);
    CHECK_THROWS_AS(make_saturating_driver(-1.0), ModelError);
}
