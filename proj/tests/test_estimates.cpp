#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "qexp/estimates.hpp"
#include "qexp/lattice.hpp"
#include "qexp/model.hpp"
#include "qexp/presets.hpp"

using namespace qexp;

namespace {

MarkSpec two_marks() { return MarkSpec({{0.5, -0.8}}, {{2.0, 1.0}}); }

LevyModel jumpy_model() {
    return make_additive_model({0.0}, {0.1}, {1.0}, 1, two_marks(), {0.3});
}

LevyModel brownian_model() { return make_additive_model({0.0}, {0.0}, {1.0}, 1); }

}  // namespace

TEST_CASE("bmo norm: deterministic unit integrand has tail profile T - t") {
    // Affine terminal with unit slope and unit vol pins Z = 1 at every node,
    // so the conditional tail of |Z|^2 is exactly the remaining horizon.
    const int N = 10;
    auto sol = solve_lattice(brownian_model(), {0.0, 1.0, N}, make_zero_driver(1),
                             make_affine_terminal(0.0, 1.0));
    auto est = bmo_norm(sol, BmoKind::z);
    CHECK(est.value == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(est.per_time_profile.size() == static_cast<std::size_t>(N) + 1);
    for (int i = 0; i <= N; ++i)
        CHECK(est.per_time_profile[i] == Catch::Approx(1.0 - i * 0.1).margin(1e-12));
    double worst = 0.0;
    for (double v : est.per_time_profile) worst = std::max(worst, v);
    CHECK(est.value == worst);
    CHECK_FALSE(est.estimator_note.empty());

    // No marks: every jump-slice norm vanishes identically.
    CHECK(psi_sup_norm(sol) == 0.0);
    CHECK(bmo_norm(sol, BmoKind::psi_quadratic).value == 0.0);
    CHECK(bmo_norm(sol, BmoKind::psi_bmo).value == 0.0);
}

TEST_CASE("bmo norm: jump-slice norms obey the sandwich inequality") {
    auto sol = solve_lattice(jumpy_model(), {0.0, 1.0, 12},
                             make_saturating_driver(1.0, 0.0, two_marks()),
                             make_tanh_terminal(1.0, 0.0));
    const double quad = bmo_norm(sol, BmoKind::psi_quadratic).value;
    const double jinf = psi_sup_norm(sol);
    const double total = bmo_norm(sol, BmoKind::psi_bmo).value;
    CHECK(jinf > 0.0);
    CHECK(quad > 0.0);
    CHECK(total >= std::max(quad, jinf * jinf) - 1e-12);
    CHECK(total <= quad + jinf * jinf + 1e-12);
}

TEST_CASE("energy check: unit integrand freezes all three moments") {
    auto sol = solve_lattice(brownian_model(), {0.0, 1.0, 10}, make_zero_driver(1),
                             make_affine_terminal(0.0, 1.0));
    auto r1 = energy_check(sol, 1);
    CHECK(r1.realized_value == Catch::Approx(1.0).margin(1e-12));
    CHECK(r1.bound_value == Catch::Approx(1.0).margin(1e-12));
    CHECK_FALSE(r1.violated);

    auto r2 = energy_check(sol, 2);
    CHECK(r2.realized_value == Catch::Approx(1.0).margin(1e-12));
    CHECK(r2.bound_value == Catch::Approx(2.0).margin(1e-12));
    CHECK(r2.slack == Catch::Approx(1.0).margin(1e-11));
    CHECK_FALSE(r2.violated);

    auto r3 = energy_check(sol, 3);
    CHECK(r3.realized_value == Catch::Approx(1.0).margin(1e-12));
    CHECK(r3.bound_value == Catch::Approx(6.0).margin(1e-12));
    CHECK_FALSE(r3.violated);

    CHECK_THROWS_AS(energy_check(sol, 0), ConfigError);
    CHECK_THROWS_AS(energy_check(sol, 4), ConfigError);
}

TEST_CASE("energy check: state-dependent integrand keeps the inequality with slack") {
    auto sol = solve_lattice(brownian_model(), {0.0, 1.0, 12}, make_zero_driver(1),
                             make_tanh_terminal(1.0, 0.0));
    auto est = bmo_norm(sol, BmoKind::z);
    auto r1 = energy_check(sol, 1);
    CHECK(r1.realized_value > 0.0);
    // the mean is the tau = 0 member of the sup defining the norm
    CHECK(r1.realized_value <= est.value + 1e-12);
    auto r2 = energy_check(sol, 2);
    CHECK_FALSE(r2.violated);
    CHECK(r2.slack > 0.0);
    auto r3 = energy_check(sol, 3);
    CHECK_FALSE(r3.violated);
}

TEST_CASE("universal y bound: frozen values, monotonicity and guards") {
    CHECK(universal_y_bound(0.0, 1.0, 1.0, 1.0, 0.0) == 1.0);
    CHECK(universal_y_bound(0.5, 1.0, 2.0, 2.0, 0.1) ==
          Catch::Approx(5.980220022609899).margin(1e-12));
    CHECK(universal_y_bound(0.5, 1.0, 2.0, 2.0, 0.1) ==
          Catch::Approx(2.2 * std::exp(1.0)).epsilon(1e-15));

    const double base = universal_y_bound(0.3, 1.0, 1.5, 1.0, 0.2);
    CHECK(universal_y_bound(0.6, 1.0, 1.5, 1.0, 0.2) >= base);
    CHECK(universal_y_bound(0.3, 1.0, 2.5, 1.0, 0.2) >= base);
    CHECK(universal_y_bound(0.3, 1.0, 1.5, 1.7, 0.2) >= base);
    CHECK(universal_y_bound(0.3, 1.0, 1.5, 1.0, 0.9) >= base);

    CHECK_THROWS_AS(universal_y_bound(0.3, 0.0, 1.0, 1.0, 0.0), ConfigError);
    CHECK_THROWS_AS(universal_y_bound(0.3, -1.0, 1.0, 1.0, 0.0), ConfigError);
    CHECK_THROWS_AS(universal_y_bound(0.3, 1.0, 1.0, -1.0, 0.0), ConfigError);
}

TEST_CASE("universal bmo bound: frozen value and domination on a solved instance") {
    CHECK(universal_bmo_bound(1.0, 0.0, 1.0, 0.0, 0.0) == 3.0);
    CHECK_THROWS_AS(universal_bmo_bound(0.0, 0.0, 1.0, 0.0, 0.0), ConfigError);

    const int N = 16;
    const double dt = 1.0 / N;
    auto sol = solve_lattice(jumpy_model(), {0.0, 1.0, N},
                             make_saturating_driver(1.0, 0.0, two_marks()),
                             make_tanh_terminal(0.4, 0.0));

    // Y bound from the terminal sup norm; the driver has no y dependence and
    // no constant envelope, so beta = l = 0. Discrete bias is O(dt), covered
    // by the sqrt(dt)-scaled tolerance.
    auto y_report = make_bound_report("y sup", universal_y_bound(0.0, 1.0, 1.0, 0.4, 0.0),
                                      sol.sup_y(), 0.5 * std::sqrt(dt));
    CHECK_FALSE(y_report.violated);

    const double realized =
        bmo_norm(sol, BmoKind::z).value + bmo_norm(sol, BmoKind::psi_quadratic).value;
    const double bound = universal_bmo_bound(1.0, 0.0, 1.0, sol.sup_y(), 0.0);
    auto z_report = make_bound_report("z+psi bmo", bound, realized, 0.5 * std::sqrt(dt));
    CHECK_FALSE(z_report.violated);
    CHECK(realized <= bound);
    CHECK(bound >= 3.0);
}

TEST_CASE("bound report: violation flag follows realized - bound vs tolerance") {
    auto bad = make_bound_report("q", 1.0, 1.5, 0.1);
    CHECK(bad.violated);
    CHECK(bad.slack == Catch::Approx(-0.5).margin(1e-15));
    auto ok = make_bound_report("q", 1.0, 1.05, 0.1);
    CHECK_FALSE(ok.violated);
    auto exact = make_bound_report("q", 1.0, 1.0, 0.0);
    CHECK_FALSE(exact.violated);
}

TEST_CASE("stability gap: identical solutions report exact zeros") {
    auto sol = solve_lattice(jumpy_model(), {0.0, 1.0, 8},
                             make_linear_driver(0.3, {0.2}, {0.2}, two_marks()),
                             make_affine_terminal(0.4, 0.5));
    auto r = stability_gap(sol, sol, 0.0);
    CHECK(r.dz_bmo == 0.0);
    CHECK(r.dpsi_bmo == 0.0);
    CHECK(r.lhs == 0.0);
    CHECK(r.dy_sup == 0.0);
    CHECK(r.rhs == 0.0);
    CHECK(r.ratio == 0.0);

    auto other = solve_lattice(jumpy_model(), {0.0, 1.0, 12},
                               make_linear_driver(0.3, {0.2}, {0.2}, two_marks()),
                               make_affine_terminal(0.4, 0.5));
    CHECK_THROWS_AS(stability_gap(sol, other, 0.0), ConfigError);
    CHECK_THROWS_AS(stability_gap(sol, sol, -0.1), ConfigError);
    CHECK_THROWS_AS(stability_gap(sol, sol, 0.0, {{0.0}}), ConfigError);
}

TEST_CASE("stability gap: linear-driver perturbation sweep scales linearly") {
    // Perturbing the terminal slope by eps makes the difference BSDE linear
    // and homogeneous with terminal eps * x, so every gap is exactly
    // proportional to eps on the lattice.
    const int N = 12;
    auto model = make_additive_model({0.5}, {0.1}, {1.0}, 1);
    auto lat = build_lattice(model, {0.0, 1.0, N});
    auto driver = make_linear_driver(0.3, {0.2}, {});
    auto base = solve_lattice(lat, driver, make_affine_terminal(0.2, 1.0));

    double x_sup = 0.0;
    for (int node = 0; node < lat->n_nodes(N); ++node)
        x_sup = std::max(x_sup, std::abs(lat->state(N, node)[0]));

    const std::vector<double> eps = {0.1, 0.01, 0.001};
    std::vector<StabilityGapReport> sweep;
    for (double e : eps) {
        auto pert = solve_lattice(lat, driver, make_affine_terminal(0.2, 1.0 + e));
        sweep.push_back(stability_gap(base, pert, e * x_sup));
    }

    for (const auto& r : sweep) {
        CHECK(r.dpsi_bmo == 0.0);
        CHECK(r.dz_bmo > 0.0);
        CHECK(r.dy_sup > 0.0);
        CHECK(r.rhs > 0.0);
    }
    for (std::size_t k = 0; k + 1 < sweep.size(); ++k) {
        const double exponent = std::log10(sweep[k].dy_sup / sweep[k + 1].dy_sup);
        CHECK(exponent > 0.9);
        CHECK(exponent < 1.1);
        CHECK(sweep[k].lhs / sweep[k + 1].lhs == Catch::Approx(10.0).epsilon(1e-4));
        CHECK(sweep[k].ratio == Catch::Approx(sweep[k + 1].ratio).epsilon(1e-4));
    }
}

TEST_CASE("comparison: ordered terminals and ordered drivers solve in order") {
    auto model = jumpy_model();
    auto lat = build_lattice(model, {0.0, 1.0, 10});
    auto driver = make_linear_driver(0.3, {0.2}, {0.2}, two_marks());

    auto hi = solve_lattice(lat, driver, make_affine_terminal(0.4, 0.5));
    auto lo = solve_lattice(lat, driver, make_affine_terminal(0.3, 0.5));
    auto cmp = compare_solutions(lo, hi);
    CHECK(cmp.leq);
    CHECK_FALSE(cmp.equal);
    CHECK(cmp.max_violation == 0.0);
    CHECK(cmp.max_signed_gap < 0.0);
    CHECK(cmp.max_abs_gap >= 0.1 - 1e-12);

    DriverSpec shifted = driver;
    shifted.f = [inner = driver.f](double t, double y, std::span<const double> z,
                                   std::span<const double> psi) {
        return inner(t, y, z, psi) - 0.05;
    };
    auto lower_f = solve_lattice(lat, shifted, make_affine_terminal(0.4, 0.5));
    auto cmp_f = compare_solutions(lower_f, hi);
    CHECK(cmp_f.leq);
    CHECK(cmp_f.max_violation == 0.0);

    auto self = compare_solutions(hi, hi);
    CHECK(self.equal);
    CHECK(self.leq);
    CHECK(self.max_violation == 0.0);
    CHECK(self.max_abs_gap == 0.0);

    auto other_grid = solve_lattice(model, {0.0, 1.0, 12}, driver, make_affine_terminal(0.4, 0.5));
    CHECK_THROWS_AS(compare_solutions(hi, other_grid), ConfigError);
}
