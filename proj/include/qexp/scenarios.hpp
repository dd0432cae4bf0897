#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "qexp/cascade.hpp"
#include "qexp/config.hpp"
#include "qexp/estimates.hpp"
#include "qexp/lattice.hpp"
#include "qexp/malliavin.hpp"
#include "qexp/regression.hpp"
#include "qexp/report.hpp"

namespace qexp {

struct ScenarioOutput {
    std::vector<CsvTable> tables;
    std::vector<CheckVerdict> checks;
    std::vector<std::string> notes;
};

using ScenarioFn = ScenarioOutput (*)(const ExperimentConfig&);

struct ScenarioInfo {
    std::string name;
    std::string blurb;
    ScenarioFn fn = nullptr;
};

namespace detail {

// Short numeric formatting for check names and notes (full precision stays in
// the CSV cells).
inline std::string short_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

inline double sp_num(const ExperimentConfig& cfg, const std::string& key, double fallback) {
    if (!cfg.scenario_params.contains(key)) return fallback;
    return expect_number(cfg.scenario_params.at(key), "config.scenario_params." + key);
}

inline int sp_int(const ExperimentConfig& cfg, const std::string& key, int fallback) {
    if (!cfg.scenario_params.contains(key)) return fallback;
    return expect_int(cfg.scenario_params.at(key), "config.scenario_params." + key);
}

inline std::vector<double> sp_list(const ExperimentConfig& cfg, const std::string& key,
                                   std::vector<double> fallback) {
    if (!cfg.scenario_params.contains(key)) return fallback;
    const auto& v = cfg.scenario_params.at(key);
    const std::string path = "config.scenario_params." + key;
    if (!v.is_array() || v.empty()) throw ConfigError(path + ": expected a nonempty array");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(expect_number(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

// Scenarios pick their own step count unless the config spelled out a grid.
inline TimeGrid scenario_grid(const ExperimentConfig& cfg, int fallback_steps) {
    if (cfg.echo.contains("grid")) return cfg.grid;
    return TimeGrid(cfg.grid.t0, cfg.grid.horizon, fallback_steps);
}

inline LevyModel resolve_model(const ExperimentConfig& cfg, const PresetRef& fallback) {
    return build_model(cfg.model ? *cfg.model : fallback);
}

inline BsdeSolution backend_solve(const ExperimentConfig& cfg, const LevyModel& model,
                                  const TimeGrid& grid, const DriverSpec& driver,
                                  const TerminalSpec& terminal) {
    if (cfg.backend == "regression")
        return solve_regression(model, grid, cfg.n_paths, cfg.seed, driver, terminal,
                                RegressionBasis{cfg.basis_degree}, cfg.picard);
    return solve_lattice(model, grid, driver, terminal, cfg.picard);
}

inline CsvTable profile_table(const BsdeSolution& sol, std::string name) {
    CsvTable t;
    t.name = std::move(name);
    t.columns = {"step", "t", "y_mean", "y_abs_max"};
    const StepStructure& st = *sol.structure;
    const TimeGrid& g = st.grid();
    for (int i = 0; i <= g.n_steps; ++i) {
        double mean = 0.0, amax = 0.0;
        for (int node = 0; node < st.n_nodes(i); ++node) {
            mean += st.node_weight(i, node) * sol.y[i][node];
            amax = std::max(amax, std::abs(sol.y[i][node]));
        }
        t.rows.push_back({cell(i), cell(g.t0 + i * g.dt()), cell(mean), cell(amax)});
    }
    return t;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double sd_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Least-squares slope of log y against log x.
inline double log_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    std::vector<double> lx(n), ly(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) return 0.0;
        lx[i] = std::log(x[i]);
        ly[i] = std::log(y[i]);
    }
    const double mx = mean_of(lx), my = mean_of(ly);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    return sxx > 0.0 ? sxy / sxx : 0.0;
}

inline void append_warnings(ScenarioOutput& out, const BsdeSolution& sol,
                            const std::string& label) {
    for (const auto& w : sol.warnings) out.notes.push_back(label + ": " + w);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// zero_driver_smoke: wiring check with a configurable expected value, used to
// demonstrate the exit-code contract.
// ---------------------------------------------------------------------------

inline ScenarioOutput scenario_zero_driver_smoke(const ExperimentConfig& cfg) {
    ScenarioOutput out;
    auto model = detail::resolve_model(cfg, {"brownian", {}});
    const TimeGrid grid = detail::scenario_grid(cfg, 50);
    DriverSpec driver =
        cfg.driver ? build_driver(*cfg.driver, model) : make_zero_driver(model.dim_w);
    TerminalSpec terminal = cfg.terminal ? build_terminal(*cfg.terminal) : make_constant_terminal(1.0);

    auto sol = detail::backend_solve(cfg, model, grid, driver, terminal);
    const double expected = detail::sp_num(cfg, "expected_y0", 1.0);
    const double tol = detail::sp_num(cfg, "tolerance", 1e-9);
    const double gap = std::abs(sol.y0() - expected);

    out.checks.push_back(make_check("y0_matches_expected", gap <= tol, gap, tol,
                                    "y0 = " + format_number(sol.y0()) + ", expected " +
                                        format_number(expected)));
    out.tables.push_back(detail::profile_table(sol, "solution_profile"));
    detail::append_warnings(out, sol, "solver");
    return out;
}

// ---------------------------------------------------------------------------
// cole_hopf: quadratic driver with affine terminal on an additive scalar
// model; Y0 has the closed form a + b (x0 + drift T) + l0 T + g (b sigma)^2 T / 2.
// ---------------------------------------------------------------------------

inline ScenarioOutput scenario_cole_hopf(const ExperimentConfig& cfg) {
    if (cfg.driver)
        throw ConfigError(
            "config.driver: cole_hopf fixes its driver; tune scenario_params.gamma / l0");
    if (cfg.terminal)
        throw ConfigError(
            "config.terminal: cole_hopf fixes its terminal; tune scenario_params.terminal_a / "
            "terminal_b");

    auto model = detail::resolve_model(cfg, {"brownian", {}});
    if (!model.additive || model.dim_x != 1 || model.dim_w != 1 || model.marks.total_marks() > 0)
        throw ConfigError("config.model: cole_hopf needs a scalar continuous additive model");

    const double gamma = detail::sp_num(cfg, "gamma", 1.0);
    const double l0 = detail::sp_num(cfg, "l0", 0.0);
    const double a = detail::sp_num(cfg, "terminal_a", 0.0);
    const double b = detail::sp_num(cfg, "terminal_b", 1.0);
    const double tol = detail::sp_num(cfg, "tolerance", 0.02);

    const TimeGrid grid = detail::scenario_grid(cfg, 100);
    const double T = grid.horizon - grid.t0;

    double drift = 0.0, sigma = 0.0;
    {
        std::vector<double> buf(1);
        model.drift(grid.t0, model.x0, buf);
        drift = buf[0];
        model.vol(grid.t0, model.x0, buf);
        sigma = buf[0];
    }
    const double closed =
        a + b * (model.x0[0] + drift * T) + l0 * T + 0.5 * gamma * (b * sigma) * (b * sigma) * T;

    auto sol = detail::backend_solve(cfg, model, grid, make_saturating_driver(gamma, l0),
                                     make_affine_terminal(a, b));
    const double gap = std::abs(sol.y0() - closed);

    ScenarioOutput out;
    out.checks.push_back(make_check("y0_matches_closed_form", gap <= tol, gap, tol,
                                    "y0 = " + format_number(sol.y0()) + ", closed form " +
                                        format_number(closed)));
    CsvTable oracle;
    oracle.name = "oracle";
    oracle.columns = {"quantity", "value"};
    oracle.rows = {{"y0", cell(sol.y0())},
                   {"closed_form", cell(closed)},
                   {"abs_error", cell(gap)},
                   {"gamma", cell(gamma)},
                   {"sigma", cell(sigma)},
                   {"drift", cell(drift)}};
    out.tables.push_back(std::move(oracle));
    out.tables.push_back(detail::profile_table(sol, "solution_profile"));
    detail::append_warnings(out, sol, "solver");
    return out;
}

// ---------------------------------------------------------------------------
// linear_oracle: f = alpha y against the exponential, a step-halving order
// estimate, and a regression-vs-lattice agreement check across seed
// replicates.
// ---------------------------------------------------------------------------

inline ScenarioOutput scenario_linear_oracle(const ExperimentConfig& cfg) {
    ScenarioOutput out;
    const double alpha = detail::sp_num(cfg, "alpha", 1.0);
    const double x0 = detail::sp_num(cfg, "x0", 1.0);
    const double tol = detail::sp_num(cfg, "tolerance", 0.05);
    auto model = make_additive_model({x0}, {0.0}, {1.0}, 1);
    auto driver = make_linear_driver(alpha, {0.0}, {});

    const TimeGrid grid = detail::scenario_grid(cfg, 100);
    const double T = grid.horizon - grid.t0;
    const double exact = std::exp(alpha * T);

    std::vector<int> sweep = {std::max(2, grid.n_steps / 4), std::max(3, grid.n_steps / 2),
                              grid.n_steps};
    sweep.erase(std::unique(sweep.begin(), sweep.end()), sweep.end());

    CsvTable dt_sweep;
    dt_sweep.name = "dt_sweep";
    dt_sweep.columns = {"n_steps", "dt", "y0", "abs_error"};
    std::vector<double> errs, dts;
    for (int n : sweep) {
        const TimeGrid g(grid.t0, grid.horizon, n);
        auto sol = solve_lattice(model, g, driver, make_constant_terminal(1.0), cfg.picard);
        const double err = std::abs(sol.y0() - exact);
        errs.push_back(err);
        dts.push_back(g.dt());
        dt_sweep.rows.push_back({cell(n), cell(g.dt()), cell(sol.y0()), cell(err)});
    }
    out.tables.push_back(std::move(dt_sweep));

    const double err_fine = errs.back();
    out.checks.push_back(make_check("lattice_matches_exponential", err_fine <= tol, err_fine, tol,
                                    "exact " + format_number(exact)));

    if (sweep.size() >= 2 && errs[errs.size() - 2] > 0.0 && err_fine > 0.0) {
        const double order = std::log(errs[errs.size() - 2] / err_fine) /
                             std::log(dts[dts.size() - 2] / dts.back());
        const double lo = detail::sp_num(cfg, "order_low", 0.7);
        const double hi = detail::sp_num(cfg, "order_high", 1.3);
        out.checks.push_back(make_check("dt_convergence_order", lo <= order && order <= hi, order,
                                        hi, "expected in [" + detail::short_num(lo) + ", " +
                                                detail::short_num(hi) + "]"));
    } else {
        out.checks.push_back(skip_check("dt_convergence_order", "degenerate step sweep"));
    }

    // Identity terminal: keeps the lattice value exact while giving the
    // regression basis a state-dependent target.
    auto terminal = make_affine_terminal(0.0, 1.0);
    const double ref = solve_lattice(model, grid, driver, terminal, cfg.picard).y0();
    const int reps = std::max(2, detail::sp_int(cfg, "replicates", 5));

    CsvTable rep_table;
    rep_table.name = "regression_replicates";
    rep_table.columns = {"seed", "y0", "abs_gap_to_lattice"};
    std::vector<double> estimates;
    for (int k = 0; k < reps; ++k) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(k);
        auto sol = solve_regression(model, grid, cfg.n_paths, seed, driver, terminal,
                                    RegressionBasis{cfg.basis_degree}, cfg.picard);
        estimates.push_back(sol.y0());
        rep_table.rows.push_back(
            {cell(static_cast<int>(seed)), cell(sol.y0()), cell(std::abs(sol.y0() - ref))});
    }
    out.tables.push_back(std::move(rep_table));

    const double se = detail::sd_of(estimates);
    const double gap = std::abs(estimates.front() - ref);
    const double limit = std::max(3.0 * se, 1e-12);
    out.checks.push_back(make_check(
        "regression_within_3se", gap <= limit, gap, limit,
        "lattice y0 = " + format_number(ref) + ", replicate sd = " + format_number(se)));
    out.notes.push_back("exponential oracle " + format_number(exact) + " at alpha = " +
                        detail::short_num(alpha));
    return out;
}

// ---------------------------------------------------------------------------
// universal_bounds: sweep (gamma, horizon), solve the saturating quadratic
// driver with unit terminal sup, and compare realized sup / BMO norms against
// the a-priori caps.
// ---------------------------------------------------------------------------

inline ScenarioOutput scenario_universal_bounds(const ExperimentConfig& cfg) {
    ScenarioOutput out;
    auto gammas = detail::sp_list(cfg, "gammas", {0.5, 1.0, 2.0});
    auto horizons = detail::sp_list(cfg, "horizons", {0.5, 1.0, 2.0});
    auto model = detail::resolve_model(
        cfg, {"additive_jump", nlohmann::ordered_json{{"jump_scale", 0.3}}});
    auto terminal = make_tanh_terminal(1.0);  // sup norm 1 by construction
    const TimeGrid base_grid = detail::scenario_grid(cfg, 40);

    CsvTable table;
    table.name = "bounds_grid";
    table.columns = {"gamma",   "horizon",   "dt",      "y_sup", "y_bound",
                     "y_slack", "bmo_sq",    "bmo_bound", "verdict"};

    int y_violations = 0, bmo_violations = 0;
    double worst_y_margin = -1e300, worst_bmo_margin = -1e300;
    for (double g : gammas) {
        for (double T : horizons) {
            const TimeGrid grid(base_grid.t0, base_grid.t0 + T, base_grid.n_steps);
            auto driver = make_saturating_driver(g, 0.0, model.marks);
            auto sol = solve_lattice(model, grid, driver, terminal, cfg.picard);

            const double y_sup = sol.sup_y();
            const double y_cap = universal_y_bound(0.0, g, T, 1.0, 0.0);
            const double slack = 2.0 * grid.dt();
            const double bmo_sq = bmo_norm(sol, BmoKind::z).value +
                                  bmo_norm(sol, BmoKind::psi_quadratic).value;
            const double bmo_cap = universal_bmo_bound(g, 0.0, T, y_sup, 0.0);

            const bool ok_y = y_sup <= y_cap + slack;
            const bool ok_b = bmo_sq <= bmo_cap;
            y_violations += ok_y ? 0 : 1;
            bmo_violations += ok_b ? 0 : 1;
            worst_y_margin = std::max(worst_y_margin, y_sup - (y_cap + slack));
            worst_bmo_margin = std::max(worst_bmo_margin, bmo_sq - bmo_cap);

            table.rows.push_back({cell(g), cell(T), cell(grid.dt()), cell(y_sup), cell(y_cap),
                                  cell(slack), cell(bmo_sq), cell(bmo_cap),
                                  cell(ok_y && ok_b ? "pass" : "fail")});
        }
    }
    out.tables.push_back(std::move(table));
    out.checks.push_back(make_check("y_bounds_hold", y_violations == 0,
                                    static_cast<double>(y_violations), 0.0,
                                    "worst margin " + format_number(worst_y_margin)));
    out.checks.push_back(make_check("bmo_bounds_hold", bmo_violations == 0,
                                    static_cast<double>(bmo_violations), 0.0,
                                    "worst margin " + format_number(worst_bmo_margin)));
    return out;
}

// ---------------------------------------------------------------------------
// comparison: certified jump-monotone driver, ordered terminal and driver
// perturbations, nodewise ordering verdicts.
// ---------------------------------------------------------------------------

inline ScenarioOutput scenario_comparison(const ExperimentConfig& cfg) {
    ScenarioOutput out;
    auto model = detail::resolve_model(
        cfg, {"additive_jump", nlohmann::ordered_json{{"jump_scale", 0.3}}});
    if (model.marks.total_marks() == 0)
        throw ConfigError("config.model: comparison needs a model with jump marks");

    const double gamma = detail::sp_num(cfg, "gamma", 1.0);
    const double theta = detail::sp_num(cfg, "theta", 0.2);
    const double a = detail::sp_num(cfg, "terminal_a", 0.3);
    const double b = detail::sp_num(cfg, "terminal_b", 0.5);
    const double tol = detail::sp_num(cfg, "tolerance", 1e-10);
    auto epsilons = detail::sp_list(cfg, "epsilons", {0.1, 0.01});

    auto driver =
        make_exp_utility_driver(gamma, std::vector<double>(model.dim_w, theta), model.marks);
    auto terminal = make_affine_terminal(a, b);
    const TimeGrid grid = detail::scenario_grid(cfg, 30);
    auto lat = build_lattice(model, grid);

    const auto srep = check_structure(driver);
    const auto arep = check_agamma(driver);
    out.checks.push_back(make_check("driver_envelope_certificate", srep.passed(),
                                    static_cast<double>(srep.violations), 0.0,
                                    "sampled envelope violations"));
    out.checks.push_back(make_check(
        "jump_monotonicity_certificate", arep.passed(),
        static_cast<double>(arep.inequality_violations + arep.envelope_violations), 0.0,
        "sampled quotient-range violations"));

    auto sol0 = solve_lattice(lat, driver, terminal, cfg.picard);

    CsvTable table;
    table.name = "comparison_rows";
    table.columns = {"kind", "eps", "y0_low", "y0_high", "max_violation", "ordered"};
    for (double e : epsilons) {
        auto sol_t = solve_lattice(lat, driver, make_affine_terminal(a + e, b), cfg.picard);
        auto rep_t = compare_solutions(sol0, sol_t, tol);
        out.checks.push_back(make_check("terminal_order[eps=" + detail::short_num(e) + "]",
                                        rep_t.leq, rep_t.max_violation, tol,
                                        "y0 gap " + format_number(sol_t.y0() - sol0.y0())));
        table.rows.push_back({cell("terminal_shift"), cell(e), cell(sol0.y0()), cell(sol_t.y0()),
                              cell(rep_t.max_violation), cell(rep_t.leq ? "yes" : "no")});

        DriverSpec lowered = driver;
        auto inner = driver.f;
        lowered.name = driver.name + "_shifted";
        lowered.f = [inner, e](double t, double y, std::span<const double> z,
                               std::span<const double> psi) { return inner(t, y, z, psi) - e; };
        lowered.structure.l += e;
        auto sol_d = solve_lattice(lat, lowered, terminal, cfg.picard);
        auto rep_d = compare_solutions(sol_d, sol0, tol);
        out.checks.push_back(make_check("driver_order[eps=" + detail::short_num(e) + "]",
                                        rep_d.leq, rep_d.max_violation, tol,
                                        "y0 gap " + format_number(sol0.y0() - sol_d.y0())));
        table.rows.push_back({cell("driver_shift"), cell(e), cell(sol_d.y0()), cell(sol0.y0()),
                              cell(rep_d.max_violation), cell(rep_d.leq ? "yes" : "no")});
    }
    out.tables.push_back(std::move(table));
    return out;
}

// ---------------------------------------------------------------------------
// cascade: regularization schedule sweep with nodewise monotonicity in both
// indices, plus the Lipschitz fixed point: members above the driver's
// constants reproduce the direct solve.
// ---------------------------------------------------------------------------

inline ScenarioOutput scenario_cascade(const ExperimentConfig& cfg) {
    ScenarioOutput out;
    auto model = detail::resolve_model(
        cfg, {"additive_jump", nlohmann::ordered_json{{"jump_scale", 0.3}}});
    if (model.marks.total_marks() == 0)
        throw ConfigError("config.model: cascade needs a model with jump marks");
    // Defaults chosen so the z-slope gamma |z| crosses the low member levels
    // and the clamp visibly binds.
    const double gamma = detail::sp_num(cfg, "gamma", 2.0);
    const double theta = detail::sp_num(cfg, "theta", 0.0);
    auto driver =
        make_exp_utility_driver(gamma, std::vector<double>(model.dim_w, theta), model.marks);
    TerminalSpec terminal = cfg.terminal ? build_terminal(*cfg.terminal) : make_tanh_terminal(1.5);

    const TimeGrid grid = detail::scenario_grid(cfg, 12);
    auto lat = build_lattice(model, grid);

    std::vector<int> levels = cfg.cascade.levels;
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

    std::vector<RegularizationIndex> schedule;
    for (int n : levels)
        for (int m : levels) schedule.push_back({n, m, cfg.cascade.k_trunc});
    auto res = solve_qexp_cascade(lat, driver, terminal, schedule, {}, cfg.picard);

    CsvTable y0_table;
    y0_table.name = "cascade_y0";
    y0_table.columns = {"n", "m", "k", "y0"};
    for (std::size_t i = 0; i < res.schedule.size(); ++i)
        y0_table.rows.push_back({cell(res.schedule[i].n), cell(res.schedule[i].m),
                                 cell(res.schedule[i].k_trunc), cell(res.solutions[i].y0())});
    out.tables.push_back(std::move(y0_table));

    CsvTable order_table;
    order_table.name = "order_checks";
    order_table.columns = {"from_entry", "to_entry", "coordinate", "max_violation"};
    for (const auto& chk : res.order_checks)
        order_table.rows.push_back({cell(chk.from), cell(chk.to),
                                    cell(std::string(1, chk.coordinate)),
                                    cell(chk.max_violation)});
    out.tables.push_back(std::move(order_table));

    const double order_tol = detail::sp_num(cfg, "order_tolerance", 1e-10);
    out.checks.push_back(make_check("cascade_monotone_in_n_and_m",
                                    res.max_order_violation() <= order_tol,
                                    res.max_order_violation(), order_tol,
                                    std::to_string(res.order_checks.size()) + " ordered pairs"));

    // y0 matrix, rows n, columns m.
    {
        std::string head = "cascade y0 matrix at k=" + std::to_string(cfg.cascade.k_trunc) +
                           " (columns m =";
        for (int m : levels) head += " " + std::to_string(m);
        out.notes.push_back(head + "):");
        std::size_t idx = 0;
        for (int n : levels) {
            std::string line = "  n=" + std::to_string(n) + ":";
            for (std::size_t j = 0; j < levels.size(); ++j)
                line += " " + format_number(res.solutions[idx++].y0());
            out.notes.push_back(line);
        }
    }

    // Lipschitz fixed point: a driver with constants below the member index
    // passes through the regularization unchanged.
    auto model2 = make_additive_model({0.0}, {0.0}, {1.0}, 1);
    auto driver2 = make_linear_driver(1.0, {2.0}, {});
    auto terminal2 = make_tanh_terminal(1.0);
    auto lat2 = build_lattice(model2, grid);
    auto direct = solve_lattice(lat2, driver2, terminal2, cfg.picard);

    const int k_lip = detail::sp_int(cfg, "lipschitz_k", 64);
    std::vector<RegularizationIndex> members;
    for (int n : levels)
        for (int m : levels)
            if (n >= 3 && m >= 3) members.push_back({n, m, k_lip});
    if (members.empty()) {
        out.checks.push_back(
            skip_check("lipschitz_members_match_direct", "no cascade levels >= 3 configured"));
    } else {
        auto res2 = solve_qexp_cascade(lat2, driver2, terminal2, members, {}, cfg.picard);
        double max_gap = 0.0;
        for (const auto& sol : res2.solutions)
            max_gap = std::max(max_gap, sup_y_gap(sol, direct));
        const double lip_tol = detail::sp_num(cfg, "lipschitz_tolerance", 1e-8);
        out.checks.push_back(make_check("lipschitz_members_match_direct", max_gap <= lip_tol,
                                        max_gap, lip_tol,
                                        std::to_string(members.size()) + " members vs direct"));
    }
    return out;
}

// ---------------------------------------------------------------------------
// stability: shrink a terminal perturbation and watch the (Y, Z, psi) gaps
// scale linearly with a bounded BMO-to-data ratio.
// ---------------------------------------------------------------------------

inline ScenarioOutput scenario_stability(const ExperimentConfig& cfg) {
    ScenarioOutput out;
    auto model = detail::resolve_model(
        cfg, {"brownian",
              nlohmann::ordered_json{{"x0", 0.5}, {"drift", 0.1}, {"sigma", 1.0}}});
    const double alpha = detail::sp_num(cfg, "alpha", 0.3);
    const double bz = detail::sp_num(cfg, "bz", 0.2);
    const double a = detail::sp_num(cfg, "terminal_a", 0.2);
    const double b = detail::sp_num(cfg, "terminal_b", 1.0);
    auto epsilons = detail::sp_list(cfg, "epsilons", {0.1, 0.01, 0.001});
    std::sort(epsilons.begin(), epsilons.end(), std::greater<>());

    auto driver = make_linear_driver(alpha, std::vector<double>(model.dim_w, bz), {});
    const TimeGrid grid = detail::scenario_grid(cfg, 40);
    auto lat = build_lattice(model, grid);
    auto sol0 = solve_lattice(lat, driver, make_affine_terminal(a, b), cfg.picard);

    double x_sup = 0.0;
    for (int node = 0; node < lat->n_nodes(grid.n_steps); ++node)
        x_sup = std::max(x_sup, std::abs(lat->state(grid.n_steps, node)[0]));

    CsvTable table;
    table.name = "stability_rows";
    table.columns = {"eps",     "dy_sup", "dz_bmo", "dpsi_bmo",
                     "dxi_sup", "lhs",    "rhs",    "ratio"};
    std::vector<double> dy_sups, ratios;
    for (double e : epsilons) {
        auto sol_e = solve_lattice(lat, driver, make_affine_terminal(a, b + e), cfg.picard);
        auto rep = stability_gap(sol0, sol_e, e * x_sup);
        dy_sups.push_back(rep.dy_sup);
        ratios.push_back(rep.ratio);
        table.rows.push_back({cell(e), cell(rep.dy_sup), cell(rep.dz_bmo), cell(rep.dpsi_bmo),
                              cell(rep.dxi_sup), cell(rep.lhs), cell(rep.rhs), cell(rep.ratio)});
    }
    out.tables.push_back(std::move(table));

    const double slope = detail::log_slope(epsilons, dy_sups);
    const double lo = detail::sp_num(cfg, "exponent_low", 0.9);
    const double hi = detail::sp_num(cfg, "exponent_high", 1.1);
    out.checks.push_back(make_check("perturbation_scaling_exponent", lo <= slope && slope <= hi,
                                    slope, hi,
                                    "expected in [" + detail::short_num(lo) + ", " +
                                        detail::short_num(hi) + "]"));
    const double ratio_max = *std::max_element(ratios.begin(), ratios.end());
    const double ratio_cap = detail::sp_num(cfg, "ratio_limit", 5.0);
    out.checks.push_back(make_check("gap_ratio_bounded", ratio_max <= ratio_cap, ratio_max,
                                    ratio_cap,
                                    "min ratio " + format_number(*std::min_element(
                                        ratios.begin(), ratios.end()))));
    return out;
}

// ---------------------------------------------------------------------------
// energy: n-th moment of the quadratic variation against n! BMO^n on a small
// instance battery.
// ---------------------------------------------------------------------------

inline ScenarioOutput scenario_energy(const ExperimentConfig& cfg) {
    ScenarioOutput out;
    auto orders_d = detail::sp_list(cfg, "orders", {1.0, 2.0});
    const TimeGrid grid = detail::scenario_grid(cfg, 30);

    struct Instance {
        std::string label;
        LevyModel model;
        DriverSpec driver;
        TerminalSpec terminal;
    };
    auto jumpy = build_model({"additive_jump", nlohmann::ordered_json{{"jump_scale", 0.3}}});
    std::vector<Instance> instances;
    instances.push_back({"quadratic_brownian", make_additive_model({0.0}, {0.0}, {1.0}, 1),
                         make_saturating_driver(1.0), make_tanh_terminal(1.0)});
    instances.push_back({"linear_jumps", jumpy,
                         make_linear_driver(0.3, {0.2}, {0.2}, jumpy.marks),
                         make_affine_terminal(0.4, 0.5)});
    instances.push_back({"zero_driver", make_additive_model({0.0}, {0.0}, {1.0}, 1),
                         make_zero_driver(1), make_affine_terminal(0.0, 1.0)});

    CsvTable table;
    table.name = "energy_rows";
    table.columns = {"instance", "order", "realized", "bound", "slack", "verdict"};
    int violations = 0;
    for (const auto& inst : instances) {
        auto sol = solve_lattice(inst.model, grid, inst.driver, inst.terminal, cfg.picard);
        for (double od : orders_d) {
            const int order = static_cast<int>(od);
            auto rep = energy_check(sol, order);
            violations += rep.violated ? 1 : 0;
            table.rows.push_back({cell(inst.label), cell(order), cell(rep.realized_value),
                                  cell(rep.bound_value), cell(rep.slack),
                                  cell(rep.violated ? "fail" : "pass")});
        }
    }
    out.tables.push_back(std::move(table));
    out.checks.push_back(make_check("energy_moments_bounded", violations == 0,
                                    static_cast<double>(violations), 0.0,
                                    std::to_string(instances.size()) + " instances x " +
                                        std::to_string(orders_d.size()) + " orders"));
    return out;
}

// ---------------------------------------------------------------------------
// malliavin: derivative flows against Z and psi slices on closed-form
// instances, a pathwise Monte-Carlo gap with its standard error, and a
// refinement run showing the lattice jump-row gap shrink.
// ---------------------------------------------------------------------------

inline ScenarioOutput scenario_malliavin(const ExperimentConfig& cfg) {
    ScenarioOutput out;
    const double tol = detail::sp_num(cfg, "tolerance", 0.05);
    auto fractions = detail::sp_list(cfg, "fractions", {0.25, 0.5, 0.75});
    RepresentationOptions ropt;
    ropt.fractions = fractions;
    ropt.picard = cfg.picard;
    const TimeGrid grid = detail::scenario_grid(cfg, 20);

    CsvTable rep_table;
    rep_table.name = "representation_rows";
    rep_table.columns = {"instance", "s", "direction", "quantity", "lhs", "rhs", "abs_error"};
    auto add_rows = [&rep_table](const std::string& label, const RepresentationDiagnostics& d) {
        for (const auto& r : d.rows)
            rep_table.rows.push_back({cell(label), cell(r.s), cell(r.direction), cell(r.quantity),
                                      cell(r.lhs), cell(r.rhs), cell(r.abs_error)});
    };

    {
        MarkovProblem prob{make_additive_model({0.4}, {0.0}, {1.0}, 1), make_zero_driver(1),
                           make_affine_terminal(0.0, 1.0)};
        auto diag = check_representation(prob, build_lattice(prob.model, grid), ropt);
        add_rows("identity", diag);
        out.checks.push_back(make_check("identity_representation", diag.max_abs_error() <= tol,
                                        diag.max_abs_error(), tol, ""));
        out.notes.push_back(diag.note);
    }
    {
        MarkovProblem prob{make_additive_model({0.0}, {0.0}, {1.0}, 1),
                           make_saturating_driver(1.0), make_affine_terminal(0.0, 1.0)};
        auto diag = check_representation(prob, build_lattice(prob.model, grid), ropt);
        add_rows("quadratic", diag);
        out.checks.push_back(make_check("quadratic_representation", diag.max_abs_error() <= tol,
                                        diag.max_abs_error(), tol, ""));
    }

    // Pathwise Monte-Carlo gap between the derivative flow and the regressed
    // Z slice. The Z projection regressand is Y dW, so the mean of a single
    // run carries O(1/sqrt(n dt)) sampling noise; the standard error comes
    // from independent seed replicates.
    CsvTable mc_table;
    mc_table.name = "mc_diagnostic";
    mc_table.columns = {"s", "step", "n_paths", "replicates", "mean_gap", "se", "limit"};
    {
        MarkovProblem prob{
            build_model({"linear_drift",
                         nlohmann::ordered_json{{"x0", 1.0}, {"a", 0.5}, {"sigma", 0.4}}}),
            make_zero_driver(1), make_tanh_terminal(1.0)};
        const TimeGrid mc_grid = detail::scenario_grid(cfg, 16);
        const int reps = std::max(2, detail::sp_int(cfg, "mc_replicates", 3));

        std::vector<std::vector<double>> rep_means(fractions.size());
        std::vector<int> steps(fractions.size(), 0);
        for (int r = 0; r < reps; ++r) {
            auto st = build_regression_structure(
                prob.model,
                simulate_paths(prob.model, mc_grid, cfg.n_paths,
                               cfg.seed + static_cast<std::uint64_t>(r)),
                RegressionBasis{cfg.basis_degree});
            auto base = solve_regression(st, prob.driver, prob.terminal, cfg.picard);
            if (r == 0) detail::append_warnings(out, base, "regression");
            for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
                const double s = mc_grid.t0 + fractions[fi] * (mc_grid.horizon - mc_grid.t0);
                auto D = solve_malliavin_wiener(base, prob, DerivativeDirection::wiener(0, s),
                                                cfg.picard);
                const int is = D.start_step;
                steps[fi] = is;
                std::vector<double> gaps(static_cast<std::size_t>(cfg.n_paths));
                for (int p = 0; p < cfg.n_paths; ++p)
                    gaps[p] = D.process.y[is][p] - base.z_at(is, p)[0];
                rep_means[fi].push_back(detail::mean_of(gaps));
            }
        }
        for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
            const double s = mc_grid.t0 + fractions[fi] * (mc_grid.horizon - mc_grid.t0);
            const double mean = detail::mean_of(rep_means[fi]);
            const double se = detail::sd_of(rep_means[fi]) / std::sqrt(static_cast<double>(reps));
            const double limit = std::max(tol, 3.0 * se);
            out.checks.push_back(
                make_check("pathwise_gap[s=" + detail::short_num(fractions[fi]) + "T]",
                           std::abs(mean) <= limit, std::abs(mean), limit,
                           "se " + format_number(se) + " over " + std::to_string(reps) +
                               " replicates"));
            mc_table.rows.push_back({cell(s), cell(steps[fi]), cell(cfg.n_paths), cell(reps),
                                     cell(mean), cell(se), cell(limit)});
        }
    }
    out.tables.push_back(std::move(mc_table));

    // Jump-channel rows carry an O(dt) compensator term on the lattice;
    // halving the step should visibly shrink the worst row.
    {
        MarkovProblem prob{make_additive_model({0.0}, {0.0}, {1.0}, 1,
                                               MarkSpec({{0.5, -0.8}}, {{2.0, 1.0}}), {1.0}),
                           make_zero_driver(1), make_affine_terminal(0.0, 1.0)};
        const int n_coarse = grid.n_steps;
        const int n_fine = 2 * n_coarse;
        CsvTable ref_table;
        ref_table.name = "refinement";
        ref_table.columns = {"n_steps", "dt", "max_abs_error"};
        double errs[2] = {0.0, 0.0};
        int idx = 0;
        for (int n : {n_coarse, n_fine}) {
            const TimeGrid g(grid.t0, grid.horizon, n);
            auto diag = check_representation(prob, build_lattice(prob.model, g), ropt);
            add_rows("jump_refinement[" + std::to_string(n) + "]", diag);
            errs[idx++] = diag.max_abs_error();
            ref_table.rows.push_back({cell(n), cell(g.dt()), cell(diag.max_abs_error())});
        }
        out.tables.push_back(std::move(ref_table));
        const bool ok = errs[0] > 0.0 && errs[1] < errs[0];
        out.checks.push_back(make_check("refinement_shrinks_error", ok,
                                        errs[0] > 0.0 ? errs[1] / errs[0] : 0.0, 1.0,
                                        "coarse " + format_number(errs[0]) + ", fine " +
                                            format_number(errs[1])));
    }
    out.tables.push_back(std::move(rep_table));
    return out;
}

// ---------------------------------------------------------------------------
// registry and driver
// ---------------------------------------------------------------------------

inline const std::vector<ScenarioInfo>& scenario_registry() {
    static const std::vector<ScenarioInfo> reg = {
        {"zero_driver_smoke", "wiring check with a configurable expected value",
         &scenario_zero_driver_smoke},
        {"linear_oracle", "linear driver against the exponential, step order, MC agreement",
         &scenario_linear_oracle},
        {"cole_hopf", "quadratic driver with affine terminal against its closed form",
         &scenario_cole_hopf},
        {"universal_bounds", "sup and BMO norms against the a-priori caps over (gamma, T)",
         &scenario_universal_bounds},
        {"comparison", "ordered data propagates to ordered solutions under a certified driver",
         &scenario_comparison},
        {"cascade", "regularization schedule monotonicity and the Lipschitz fixed point",
         &scenario_cascade},
        {"stability", "linear response of the solution gap to a shrinking terminal bump",
         &scenario_stability},
        {"energy", "quadratic-variation moments against factorial BMO powers",
         &scenario_energy},
        {"malliavin", "derivative flows against Z and psi slices, MC gap, refinement",
         &scenario_malliavin},
    };
    return reg;
}

inline const ScenarioInfo& find_scenario(const std::string& name) {
    for (const auto& info : scenario_registry())
        if (info.name == name) return info;
    std::string known;
    for (const auto& info : scenario_registry())
        known += (known.empty() ? "" : ", ") + info.name;
    throw ConfigError("config.scenario: unknown scenario '" + name + "' (known: " + known + ")");
}

// Runs one scenario and writes every artifact (CSV tables, manifest.json,
// summary.txt) under cfg.out_dir.
inline RunManifest run_experiment(const ExperimentConfig& cfg) {
    const ScenarioInfo& info = find_scenario(cfg.scenario);

    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + cfg.out_dir + "': " +
                              ec.message());

    const auto start = std::chrono::steady_clock::now();
    ScenarioOutput result = info.fn(cfg);
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);

    RunManifest m;
    m.scenario = cfg.scenario;
    m.config_echo = cfg.echo;
    m.checks = std::move(result.checks);
    m.notes = std::move(result.notes);
    m.timings_ms.emplace_back("scenario", static_cast<double>(elapsed.count()));

    const std::filesystem::path dir(cfg.out_dir);
    for (const auto& table : result.tables) {
        const std::string fname = table.name + ".csv";
        write_text_file((dir / fname).string(), render_csv(table));
        m.artifacts.push_back(fname);
    }
    m.artifacts.push_back("manifest.json");
    m.artifacts.push_back("summary.txt");

    write_text_file((dir / "manifest.json").string(), manifest_json(m).dump(2) + "\n");
    write_text_file((dir / "summary.txt").string(), render_summary(m));
    return m;
}

}  // namespace qexp
