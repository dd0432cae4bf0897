// Acceptance gate: one verdict line per criterion, exit code = number of
// failed criteria.
#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "qexp/scenarios.hpp"

using namespace qexp;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool ok = true;
    std::string why;

    void fail(const std::string& reason) {
        ok = false;
        if (!why.empty()) why += "; ";
        why += reason;
    }
    void expect(bool cond, const std::string& reason) {
        if (!cond) fail(reason);
    }
};

const fs::path kScratch = "acceptance_scratch";

RunManifest run_cfg(const std::string& json_text, const std::string& out_name) {
    auto cfg = parse_config(nlohmann::ordered_json::parse(json_text));
    cfg.out_dir = (kScratch / out_name).string();
    return run_experiment(cfg);
}

void expect_checks(Verdict& v, const RunManifest& m, std::initializer_list<const char*> names) {
    for (const char* name : names) {
        bool found = false;
        for (const auto& c : m.checks) {
            if (c.name != name) continue;
            found = true;
            if (c.status != "pass")
                v.fail(std::string(name) + " " + c.status + " (observed " +
                       format_number(c.observed) + ", limit " + format_number(c.limit) + ")");
        }
        if (!found) v.fail(std::string("check '") + name + "' missing");
    }
    if (!m.all_passed()) {
        for (const auto& c : m.checks)
            if (c.status == "fail") v.fail(m.scenario + ": " + c.name + " failed");
    }
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

double rel_gap(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// 1. compensator-function identities on dense grids
Verdict criterion_identities() {
    Verdict v;
    const int n = 10000;
    double worst_identity = 0.0, worst_inequality = 0.0;
    for (double gamma : {0.5, 1.0, 2.0}) {
        for (int i = 0; i < n; ++i) {
            const double x = -5.0 + 10.0 * i / (n - 1);
            const double lhs = 2.0 * gamma * j_gamma(2.0 * gamma, x);
            const double rhs =
                std::pow(std::expm1(gamma * x), 2) + 2.0 * gamma * j_gamma(gamma, x);
            worst_identity = std::max(worst_identity, rel_gap(lhs, rhs));

            const double u = gamma * x;
            const double sum = std::pow(std::expm1(u), 2) + std::pow(std::expm1(-u), 2);
            const double defect = (u * u - sum) / std::max(1.0, u * u);
            worst_inequality = std::max(worst_inequality, defect);
        }
    }
    v.expect(worst_identity <= 1e-12,
             "doubling identity off by " + format_number(worst_identity));
    v.expect(worst_inequality <= 1e-12,
             "two-sided lower bound off by " + format_number(worst_inequality));
    return v;
}

// 2. truncation and mollification layer
Verdict criterion_regularization() {
    Verdict v;

    for (double m : {1.0, 2.5, 4.0}) {
        for (int i = 0; i <= 10000; ++i) {
            const double x = -(m + 4.0) + 2.0 * (m + 4.0) * i / 10000.0;
            const double p = truncate_phi(x, m);
            if (std::abs(x) <= m && p != x) v.fail("identity region broken at m=" + format_number(m));
            if (std::abs(x) >= m + 2.0 && p != std::copysign(m + 1.0, x))
                v.fail("plateau region broken at m=" + format_number(m));
            if (std::abs(x) > m && std::abs(x) < m + 2.0 &&
                (std::abs(p) < m - 1e-15 || std::abs(p) > m + 1.0 + 1e-15))
                v.fail("blend region leaves [m, m+1] at m=" + format_number(m));
            if (truncate_phi(-x, m) != -p) v.fail("odd symmetry broken");
            const double d = truncate_phi_deriv(x, m);
            if (d < -1e-9 || d > 1.0 + 1e-9) v.fail("derivative bound broken");
        }
        for (int i = 0; i <= 100; ++i) {
            const double x = -(m + 3.0) + 2.0 * (m + 3.0) * i / 100.0;
            const double h = 1e-5;
            const double fd = (truncate_phi(x + h, m) - truncate_phi(x - h, m)) / (2.0 * h);
            if (std::abs(fd - truncate_phi_deriv(x, m)) > 1e-6)
                v.fail("derivative disagrees with finite differences");
        }
        if (!v.ok) break;
    }

    // Positive-part mollification: nondecreasing in the level, below the
    // positive part, on a driver whose both signed parts are active.
    DriverSpec d;
    d.name = "shifted_quadratic";
    d.dim_z = 1;
    d.f = [](double, double y, std::span<const double> z, std::span<const double>) {
        return 0.5 * z[0] * z[0] - 1.0 + 0.25 * y;
    };
    d.structure = {1.5, 0.25, 1.0};
    d.lipschitz_profile = [](double M) { return M + 0.25; };
    d.quadratic_growth = true;

    const ConvolveOptions numeric{ConvolveMode::numeric, 1e-10, 3};
    double worst_monotone = 0.0, worst_dominated = 0.0;
    for (double y : {-2.0, 0.0, 1.0}) {
        for (int iz = 0; iz <= 40; ++iz) {
            const double z = -4.0 + 0.2 * iz;
            const std::vector<double> zs{z};
            const double fbar = std::max(d.f(0.0, y, zs, {}), 0.0);
            double prev = -1.0;
            for (int n : {1, 2, 4, 8}) {
                const double val = inf_convolve(d, n, 0.0, y, zs, {}, numeric);
                worst_monotone = std::max(worst_monotone, prev - val);
                worst_dominated = std::max(worst_dominated, val - fbar);
                prev = val;
            }
        }
    }
    v.expect(worst_monotone <= 1e-8,
             "level monotonicity off by " + format_number(worst_monotone));
    v.expect(worst_dominated <= 1e-12,
             "positive-part domination off by " + format_number(worst_dominated));

    // Full regularization is z-Lipschitz with constant max(n, m).
    for (auto [n, m] : {std::pair{2, 3}, std::pair{5, 2}}) {
        auto reg = regularize(d, {n, m, 2}, numeric);
        const double cap = std::max(n, m) + 1e-6;
        for (double y : {-2.0, 0.5, 3.0}) {
            for (int i = 0; i <= 20; ++i) {
                for (int j = i + 1; j <= 20; ++j) {
                    const double z1 = -4.0 + 0.4 * i, z2 = -4.0 + 0.4 * j;
                    const std::vector<double> a{z1}, b{z2};
                    const double gap =
                        std::abs(reg.f(0.0, y, a, {}) - reg.f(0.0, y, b, {}));
                    if (gap > cap * std::abs(z1 - z2)) {
                        v.fail("z-Lipschitz constant exceeds max(n,m) at n=" +
                               std::to_string(n) + ", m=" + std::to_string(m));
                        i = j = 21;
                    }
                }
            }
        }
    }

    // Numeric search against the quadratic closed form.
    double worst_closed = 0.0;
    for (double gamma : {0.5, 2.0}) {
        auto quad = make_saturating_driver(gamma);
        for (int n : {1, 3}) {
            for (double z : {0.0, 0.3, 1.0, 2.5, 4.0}) {
                const std::vector<double> zs{z};
                const double got = inf_convolve(quad, n, 0.0, 0.0, zs, {}, numeric);
                const double want = detail::quadratic_inf_closed(0.0, gamma, std::abs(z),
                                                                 static_cast<double>(n));
                worst_closed = std::max(worst_closed, std::abs(got - want));
            }
        }
    }
    v.expect(worst_closed <= 1e-6,
             "quadratic closed form off by " + format_number(worst_closed));
    return v;
}

// 3. solver oracles: exponential growth, closed-form quadratic value, and
// Monte-Carlo agreement with the lattice
Verdict criterion_solver_oracles() {
    Verdict v;
    auto linear = run_cfg(R"({
        "scenario": "linear_oracle",
        "grid": {"n_steps": 100},
        "n_paths": 10000,
        "seed": 1
    })",
                          "linear_oracle");
    expect_checks(v, linear,
                  {"lattice_matches_exponential", "dt_convergence_order",
                   "regression_within_3se"});

    auto cole = run_cfg(R"({
        "scenario": "cole_hopf",
        "grid": {"n_steps": 100}
    })",
                        "cole_hopf");
    expect_checks(v, cole, {"y0_matches_closed_form"});
    return v;
}

// 4. universal sup and BMO bounds over the (gamma, horizon) sweep
Verdict criterion_universal_bounds() {
    Verdict v;
    auto m = run_cfg(R"({"scenario": "universal_bounds"})", "universal_bounds");
    expect_checks(v, m, {"y_bounds_hold", "bmo_bounds_hold"});
    return v;
}

// 5. comparison principle under a certified jump-monotone driver
Verdict criterion_comparison() {
    Verdict v;
    auto m = run_cfg(R"({
        "scenario": "comparison",
        "scenario_params": {"tolerance": 1e-12}
    })",
                     "comparison");
    expect_checks(v, m,
                  {"driver_envelope_certificate", "jump_monotonicity_certificate",
                   "terminal_order[eps=0.1]", "terminal_order[eps=0.01]",
                   "driver_order[eps=0.1]", "driver_order[eps=0.01]"});
    return v;
}

// 6. cascade ordering and the Lipschitz fixed point
Verdict criterion_cascade() {
    Verdict v;
    auto m = run_cfg(R"({"scenario": "cascade"})", "cascade");
    expect_checks(v, m, {"cascade_monotone_in_n_and_m", "lipschitz_members_match_direct"});

    // The schedule must genuinely sweep {1,2,4,8} x {1,2,4,8}.
    const std::string csv = slurp(kScratch / "cascade" / "cascade_y0.csv");
    v.expect(std::count(csv.begin(), csv.end(), '\n') == 17,
             "cascade schedule is not the full 4x4 sweep");
    return v;
}

// 7. energy inequalities at orders one and two
Verdict criterion_energy() {
    Verdict v;
    auto m = run_cfg(R"({"scenario": "energy"})", "energy");
    expect_checks(v, m, {"energy_moments_bounded"});
    return v;
}

// 8. derivative-flow diagnostics and refinement
Verdict criterion_malliavin() {
    Verdict v;
    auto m = run_cfg(R"({"scenario": "malliavin"})", "malliavin");
    expect_checks(v, m,
                  {"identity_representation", "quadratic_representation",
                   "pathwise_gap[s=0.25T]", "pathwise_gap[s=0.5T]", "pathwise_gap[s=0.75T]",
                   "refinement_shrinks_error"});
    return v;
}

// 9. stability exponent and bounded gap ratios
Verdict criterion_stability() {
    Verdict v;
    auto m = run_cfg(R"({"scenario": "stability"})", "stability");
    expect_checks(v, m, {"perturbation_scaling_exponent", "gap_ratio_bounded"});
    return v;
}

// 10. determinism of artifacts and the exit-code contract
Verdict criterion_contract() {
    Verdict v;
    const std::string cfg = R"({
        "scenario": "linear_oracle",
        "grid": {"n_steps": 20},
        "n_paths": 1500,
        "seed": 7
    })";
    auto a = run_cfg(cfg, "det_a");
    auto b = run_cfg(cfg, "det_b");
    v.expect(a.artifacts == b.artifacts, "artifact lists differ between identical runs");
    for (const auto& name : a.artifacts) {
        if (name == "manifest.json") continue;  // carries wall-clock timings
        if (slurp(kScratch / "det_a" / name) != slurp(kScratch / "det_b" / name))
            v.fail("artifact '" + name + "' differs between identical runs");
    }

#ifdef QEXP_LAB_BIN
    auto cli_exit = [&](const std::string& config_name, const std::string& text) {
        const fs::path p = kScratch / config_name;
        write_text_file(p.string(), text);
        const std::string cmd = std::string(QEXP_LAB_BIN) + " run " + p.string() + " --quiet" +
                                " --out-dir " + (kScratch / (config_name + ".out")).string() +
                                " >/dev/null 2>&1";
        const int raw = std::system(cmd.c_str());
        return raw < 0 ? raw : WEXITSTATUS(raw);
    };
    v.expect(cli_exit("cli_pass.json",
                      R"({"scenario": "zero_driver_smoke", "grid": {"n_steps": 5}})") == 0,
             "passing run must exit 0");
    v.expect(cli_exit("cli_fail.json",
                      R"({"scenario": "zero_driver_smoke", "grid": {"n_steps": 5},
                          "scenario_params": {"expected_y0": 2.0}})") == 1,
             "failed check must exit 1");
    v.expect(cli_exit("cli_bad.json", R"({"scenario": "no_such_scenario"})") == 2,
             "config error must exit 2");
#else
    v.fail("CLI binary path was not compiled in");
#endif
    return v;
}

struct Criterion {
    const char* title;
    Verdict (*fn)();
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {"compensator-function identities", &criterion_identities},
        {"truncation and mollification layer", &criterion_regularization},
        {"solver oracles (exponential, closed form, MC agreement)", &criterion_solver_oracles},
        {"universal sup and BMO bounds", &criterion_universal_bounds},
        {"comparison principle under certificates", &criterion_comparison},
        {"cascade ordering and Lipschitz fixed point", &criterion_cascade},
        {"energy inequalities", &criterion_energy},
        {"derivative-flow diagnostics", &criterion_malliavin},
        {"stability scaling", &criterion_stability},
        {"artifact determinism and exit codes", &criterion_contract},
    };

    fs::remove_all(kScratch);
    fs::create_directories(kScratch);

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict verdict;
        try {
            verdict = criteria[i].fn();
        } catch (const std::exception& e) {
            verdict.ok = false;
            verdict.why = std::string("exception: ") + e.what();
        }
        if (!verdict.ok) ++failures;
        std::printf("[%s] criterion %zu: %s%s%s\n", verdict.ok ? "PASS" : "FAIL", i + 1,
                    criteria[i].title, verdict.why.empty() ? "" : "  -- ",
                    verdict.why.c_str());
        std::fflush(stdout);
    }
    std::printf("acceptance: %zu of %zu criteria passed\n", criteria.size() - failures,
                criteria.size());
    return failures;
}
