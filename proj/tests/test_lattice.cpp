#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <string>
#include <vector>

#include "qexp/lattice.hpp"
#include "qexp/model.hpp"
#include "qexp/presets.hpp"

using namespace qexp;

namespace {

MarkSpec two_marks() { return MarkSpec({{0.5, -0.8}}, {{2.0, 1.0}}); }

LevyModel jumpy_model() {
    return make_additive_model({0.0}, {0.1}, {1.0}, 1, two_marks(), {0.3});
}

}  // namespace

TEST_CASE("lattice: branch probabilities and node weights are proper distributions") {
    auto lat = build_lattice(jumpy_model(), {0.0, 1.0, 8});
    for (int i = 0; i <= 8; ++i) {
        double total = 0.0;
        for (int node = 0; node < lat->n_nodes(i); ++node) total += lat->node_weight(i, node);
        CHECK(total == Catch::Approx(1.0).margin(1e-12));
    }
    // conditional expectation of the constant 1 is 1 at every node
    for (int i = 0; i < 8; ++i) {
        std::vector<double> ones(lat->n_nodes(i + 1), 1.0), out(lat->n_nodes(i));
        lat->condexp(i, ones, out);
        for (double v : out) CHECK(v == Catch::Approx(1.0).margin(1e-13));
    }
}

TEST_CASE("lattice solve: constant terminal with zero driver stays a flat martingale") {
    auto sol = solve_lattice(jumpy_model(), {0.0, 1.0, 8}, make_zero_driver(1, two_marks()),
                             make_constant_terminal(2.0));
    const int N = 8;
    for (int i = 0; i <= N; ++i)
        for (int node = 0; node < sol.structure->n_nodes(i); ++node)
            CHECK(std::abs(sol.y[i][node] - 2.0) < 1e-13);
    for (int i = 0; i < N; ++i) {
        for (double v : sol.z[i]) CHECK(std::abs(v) < 1e-12);
        for (double v : sol.psi[i]) CHECK(std::abs(v) < 1e-11);
    }
    CHECK(sol.y0() == Catch::Approx(2.0).margin(1e-13));
}

TEST_CASE("lattice solve: scalar linear growth matches its exact discrete value") {
    // y = E[y'] + a y dt per step with no state dependence collapses to the
    // implicit Euler recursion y_i = y_{i+1} / (1 - a dt).
    const double alpha = 1.0;
    const int N = 100;
    auto model = make_additive_model({0.0}, {0.0}, {1.0}, 1);
    auto driver = make_linear_driver(alpha, {0.0}, {});
    auto sol = solve_lattice(model, {0.0, 1.0, N}, driver, make_constant_terminal(1.0));

    const double dt = 1.0 / N;
    const double exact_discrete = std::pow(1.0 - alpha * dt, -N);
    CHECK(sol.y0() == Catch::Approx(exact_discrete).margin(1e-10));
    CHECK(std::abs(sol.y0() - std::exp(alpha)) < 0.05);
}

TEST_CASE("lattice solve: first-order convergence to the linear-driver flow") {
    const double alpha = 1.0;
    auto model = make_additive_model({0.0}, {0.0}, {1.0}, 1);
    auto driver = make_linear_driver(alpha, {0.0}, {});
    std::vector<double> errs;
    for (int N : {25, 50, 100, 200}) {
        auto sol = solve_lattice(model, {0.0, 1.0, N}, driver, make_constant_terminal(1.0));
        errs.push_back(std::abs(sol.y0() - std::exp(alpha)));
    }
    for (std::size_t k = 0; k + 1 < errs.size(); ++k) {
        const double rate = std::log2(errs[k] / errs[k + 1]);
        CHECK(rate > 0.7);
        CHECK(rate < 1.3);
    }
}

TEST_CASE("lattice solve: purely quadratic driver with Brownian terminal is exact") {
    // ln E[exp(W_T)] propagates affinely through the two-point lattice, so the
    // initial value T/2 is recovered to fixed-point tolerance, not just O(dt).
    const int N = 16;
    auto model = make_additive_model({0.0}, {0.0}, {1.0}, 1);
    auto driver = make_saturating_driver(1.0, 0.0);
    auto sol = solve_lattice(model, {0.0, 1.0, N}, driver, make_affine_terminal(0.0, 1.0));
    CHECK(sol.y0() == Catch::Approx(0.5).margin(1e-10));

    bool flagged = false;
    for (const auto& w : sol.warnings)
        if (w.find("no convergence guarantee") != std::string::npos) flagged = true;
    CHECK(flagged);
}

TEST_CASE("lattice solve: one-step identity and exact terminal slice") {
    auto model = jumpy_model();
    const TimeGrid grid{0.0, 1.0, 6};
    auto lat = build_lattice(model, grid);
    auto driver = make_linear_driver(0.5, {0.3}, {0.2}, two_marks());
    auto term = make_tanh_terminal(1.0, 0.0);
    auto sol = solve_lattice(lat, driver, term);

    const int N = grid.n_steps;
    for (int node = 0; node < lat->n_nodes(N); ++node)
        CHECK(sol.y[N][node] == term.xi(lat->state(N, node)));

    const double dt = grid.dt();
    for (int i = 0; i < N; ++i) {
        std::vector<double> ey(lat->n_nodes(i));
        lat->condexp(i, sol.y[i + 1], ey);
        for (int node = 0; node < lat->n_nodes(i); ++node) {
            const double lhs = sol.y[i][node];
            const double rhs = ey[node] + driver.f(grid.t(i), lhs, sol.z_at(i, node),
                                                   sol.psi_at(i, node)) *
                                              dt;
            CHECK(lhs == Catch::Approx(rhs).margin(5e-12));
        }
    }
}

TEST_CASE("lattice solve: affine terminal pins the discrete Z and psi estimators") {
    // xi = a + b X_T on an additive model makes every backward slice affine in
    // the state, so Z = b sigma and psi_j = b (g_j (1 - lambda_j dt) -
    // sum_{k != j} g_k lambda_k dt) exactly, g_j = scale * mark_j.
    auto marks = two_marks();
    const double scale = 0.3, sigma = 1.0, b = 2.0;
    auto model = make_additive_model({0.0}, {0.1}, {sigma}, 1, marks, {scale});
    const TimeGrid grid{0.0, 1.0, 5};
    auto sol = solve_lattice(model, grid, make_zero_driver(1, marks),
                             make_affine_terminal(0.5, b));
    const double dt = grid.dt();
    const int J = marks.total_marks();
    std::vector<double> expect_psi(J);
    for (int j = 0; j < J; ++j) {
        double v = b * scale * marks.mark_flat(j) * (1.0 - marks.rate_flat(j) * dt);
        for (int k = 0; k < J; ++k)
            if (k != j) v -= b * scale * marks.mark_flat(k) * marks.rate_flat(k) * dt;
        expect_psi[j] = v;
    }
    for (int i = 0; i < grid.n_steps; ++i) {
        for (int node = 0; node < sol.structure->n_nodes(i); ++node) {
            CHECK(sol.z_at(i, node)[0] == Catch::Approx(b * sigma).margin(1e-11));
            for (int j = 0; j < J; ++j)
                CHECK(sol.psi_at(i, node)[j] == Catch::Approx(expect_psi[j]).margin(1e-10));
        }
    }
}

TEST_CASE("lattice solve: jump slice stays within twice the solution bound") {
    auto model = jumpy_model();
    auto driver = make_saturating_driver(1.0, 0.1, two_marks());
    auto sol = solve_lattice(model, {0.0, 1.0, 24}, driver, make_tanh_terminal(1.0, 0.2));
    const double cap = 2.0 * sol.sup_y() + 1e-12;
    for (const auto& slice : sol.psi)
        for (double v : slice) CHECK(std::abs(v) <= cap);
}

TEST_CASE("lattice solve: non-contracting fixed point raises with its step") {
    auto model = make_additive_model({0.0}, {0.0}, {1.0}, 1);
    auto driver = make_linear_driver(1.0, {0.0}, {});
    try {
        solve_lattice(model, {0.0, 1.0, 1}, driver, make_constant_terminal(1.0));
        FAIL("expected a solver error");
    } catch (const SolverError& err) {
        CHECK(std::string(err.what()).find("time step 0") != std::string::npos);
    }
}

TEST_CASE("lattice: tree mode matches recombining mode on an additive instance") {
    auto model = jumpy_model();
    const TimeGrid grid{0.0, 0.5, 5};
    auto driver = make_linear_driver(0.4, {0.2}, {0.1}, two_marks());
    auto term = make_tanh_terminal(1.0, 0.0);
    auto a = solve_lattice(build_lattice(model, grid), driver, term);
    LatticeOptions tree;
    tree.force_tree = true;
    auto b = solve_lattice(build_lattice(model, grid, tree), driver, term);
    CHECK(a.y0() == Catch::Approx(b.y0()).margin(1e-12));
    CHECK(a.structure->n_nodes(5) < b.structure->n_nodes(5));
}

TEST_CASE("lattice: capacity and intensity guards") {
    auto geo = make_geometric_model(1.0, 0.05, 0.2, two_marks());
    CHECK_THROWS_AS(build_lattice(geo, {0.0, 1.0, 10}), CapacityError);

    LatticeOptions small;
    small.node_budget = 50;
    CHECK_THROWS_AS(build_lattice(jumpy_model(), {0.0, 1.0, 8}, small), CapacityError);

    auto hot = make_additive_model({0.0}, {0.0}, {1.0}, 1, MarkSpec({{1.0}}, {{30.0}}), {1.0});
    CHECK_THROWS_AS(build_lattice(hot, {0.0, 1.0, 10}), ModelError);
}
