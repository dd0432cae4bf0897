#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qexp/errors.hpp"
#include "qexp/solution.hpp"

namespace qexp {

// Which process the BMO-type norm is taken over: the Brownian integrand, the
// compensated quadratic mark variation alone, or the latter plus the squared
// sup of the jump slice (covering a jump that straddles the stopping time).
enum class BmoKind { z, psi_quadratic, psi_bmo };

struct BmoEstimate {
    double value = 0.0;  // estimated squared norm
    std::vector<double> per_time_profile;  // [0..N], node-max conditional tail at each grid time
    std::string estimator_note;
};

struct BoundReport {
    std::string quantity;
    double bound_value = 0.0;
    double realized_value = 0.0;
    double slack = 0.0;  // bound - realized
    double tolerance = 0.0;
    bool violated = false;
};

inline BoundReport make_bound_report(std::string quantity, double bound, double realized,
                                     double tolerance) {
    BoundReport r;
    r.quantity = std::move(quantity);
    r.bound_value = bound;
    r.realized_value = realized;
    r.slack = bound - realized;
    r.tolerance = tolerance;
    r.violated = realized - bound > tolerance;
    return r;
}

namespace detail {

// Backward tail accumulation: given nonnegative per-node increments a_i for
// steps 0..N-1, computes V_i = a_i + E_i[V_{i+1}] and records the node-max of
// V_i per grid time. The running max over grid times estimates the
// stopping-time sup with stopping restricted to grid times, so the result is
// a lower bound on the continuous-time quantity.
inline BmoEstimate tail_profile_max(const StepStructure& st,
                                    const std::vector<std::vector<double>>& increment) {
    const int N = st.grid().n_steps;
    BmoEstimate out;
    out.per_time_profile.assign(static_cast<std::size_t>(N) + 1, 0.0);
    std::vector<double> tail(st.n_nodes(N), 0.0);
    for (int i = N - 1; i >= 0; --i) {
        std::vector<double> cur(st.n_nodes(i));
        st.condexp(i, tail, cur);
        double worst = 0.0;
        for (int node = 0; node < st.n_nodes(i); ++node) {
            cur[node] += increment[i][node];
            worst = std::max(worst, cur[node]);
        }
        out.per_time_profile[i] = worst;
        tail = std::move(cur);
    }
    out.value = *std::max_element(out.per_time_profile.begin(), out.per_time_profile.end());
    return out;
}

inline void require_structure(const BsdeSolution& sol, const char* who) {
    if (!sol.structure) throw ConfigError(std::string(who) + " needs a solution with an attached structure");
}

// Solutions can be compared node-wise when they share a structure object or
// when their structures have identical grids and node layouts (two solves of
// the same model through the convenience overloads).
inline bool same_shape(const BsdeSolution& a, const BsdeSolution& b) {
    if (a.structure == b.structure) return true;
    const StepStructure& sa = *a.structure;
    const StepStructure& sb = *b.structure;
    const TimeGrid& ga = sa.grid();
    const TimeGrid& gb = sb.grid();
    if (ga.n_steps != gb.n_steps || ga.t0 != gb.t0 || ga.horizon != gb.horizon) return false;
    if (sa.dim_w() != sb.dim_w() || sa.dim_x() != sb.dim_x()) return false;
    for (int i = 0; i <= ga.n_steps; ++i)
        if (sa.n_nodes(i) != sb.n_nodes(i)) return false;
    return true;
}

}  // namespace detail

// Largest jump-slice entry over all times, nodes and marks.
inline double psi_sup_norm(const BsdeSolution& sol) {
    double v = 0.0;
    for (const auto& slice : sol.psi)
        for (double w : slice) v = std::max(v, std::abs(w));
    return v;
}

inline BmoEstimate bmo_norm(const BsdeSolution& sol, BmoKind kind) {
    detail::require_structure(sol, "bmo_norm");
    const StepStructure& st = *sol.structure;
    const int N = st.grid().n_steps;
    const double dt = st.grid().dt();
    if (kind != BmoKind::z && sol.n_psi != st.marks().total_marks())
        throw ConfigError("jump slice width does not match the structure's mark family");

    std::vector<std::vector<double>> inc(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
        inc[i].assign(st.n_nodes(i), 0.0);
        for (int node = 0; node < st.n_nodes(i); ++node) {
            double s = 0.0;
            if (kind == BmoKind::z) {
                for (double c : sol.z_at(i, node)) s += c * c;
            } else {
                auto psi = sol.psi_at(i, node);
                for (int j = 0; j < sol.n_psi; ++j)
                    s += psi[j] * psi[j] * st.marks().rate_flat(j);
            }
            inc[i][node] = s * dt;
        }
    }
    BmoEstimate est = detail::tail_profile_max(st, inc);
    est.estimator_note =
        "stopping times restricted to grid times, ess-sup taken as max over realized nodes; "
        "lower bound on the continuous-time norm";
    if (kind == BmoKind::psi_bmo) {
        const double jump = psi_sup_norm(sol);
        for (int i = 0; i < N; ++i) est.per_time_profile[i] += jump * jump;
        est.value = *std::max_element(est.per_time_profile.begin(), est.per_time_profile.end());
        est.estimator_note += "; includes the squared sup of the jump slice for the jump at the "
                              "stopping time";
    }
    return est;
}

// Checks E[(int_0^T |Z|^2 ds)^n] <= n! * (||Z||^2 estimate)^n. The discrete
// analogue holds exactly: expanding the n-th power of the sum over ordered
// index tuples and conditioning innermost-first bounds each factor by the
// norm estimate, so the default tolerance only absorbs rounding.
inline BoundReport energy_check(const BsdeSolution& sol, int order, double tolerance = -1.0) {
    if (order < 1 || order > 3) throw ConfigError("energy check supports moment orders 1, 2, 3");
    detail::require_structure(sol, "energy_check");
    const StepStructure& st = *sol.structure;
    const int N = st.grid().n_steps;
    const double dt = st.grid().dt();

    static constexpr int binom[4][4] = {{1, 0, 0, 0}, {1, 1, 0, 0}, {1, 2, 1, 0}, {1, 3, 3, 1}};

    // tail[p][node] = E_i[(sum_{j >= i} |Z_j|^2 dt)^p]
    std::vector<std::vector<double>> tail(static_cast<std::size_t>(order) + 1);
    tail[0].assign(st.n_nodes(N), 1.0);
    for (int p = 1; p <= order; ++p) tail[p].assign(st.n_nodes(N), 0.0);
    for (int i = N - 1; i >= 0; --i) {
        const int n_here = st.n_nodes(i);
        std::vector<std::vector<double>> ce(static_cast<std::size_t>(order) + 1);
        for (int p = 0; p <= order; ++p) {
            ce[p].resize(n_here);
            st.condexp(i, tail[p], ce[p]);
        }
        std::vector<std::vector<double>> cur(static_cast<std::size_t>(order) + 1);
        cur[0].assign(n_here, 1.0);
        for (int p = 1; p <= order; ++p) {
            cur[p].resize(n_here);
            for (int node = 0; node < n_here; ++node) {
                double a = 0.0;
                for (double c : sol.z_at(i, node)) a += c * c;
                a *= dt;
                double apow = 1.0;
                double sum = 0.0;
                for (int q = 0; q <= p; ++q) {
                    sum += binom[p][q] * apow * ce[p - q][node];
                    apow *= a;
                }
                cur[p][node] = sum;
            }
        }
        tail = std::move(cur);
    }

    double realized = 0.0;
    for (int node = 0; node < st.n_nodes(0); ++node)
        realized += st.node_weight(0, node) * tail[order][node];

    const double norm = bmo_norm(sol, BmoKind::z).value;
    double bound = 1.0;
    for (int p = 2; p <= order; ++p) bound *= p;
    bound *= std::pow(norm, order);
    if (tolerance < 0.0) tolerance = 1e-9 * std::max(1.0, std::abs(bound));
    return make_bound_report("energy moment n=" + std::to_string(order), bound, realized,
                             tolerance);
}

// Sup-norm bound for Y from the terminal sup norm and the driver's constant
// envelope: e^{beta T} (|xi| + T |l|).
inline double universal_y_bound(double beta, double gamma, double T, double xi_sup,
                                double l_sup) {
    if (!(gamma > 0.0)) throw ConfigError("universal bounds need gamma > 0");
    if (beta < 0.0 || T < 0.0 || xi_sup < 0.0 || l_sup < 0.0)
        throw ConfigError("universal bounds need nonnegative beta, horizon and sup norms");
    return std::exp(beta * T) * (xi_sup + T * l_sup);
}

// Bound on ||Z||^2 + ||psi||^2 (quadratic mark part) in terms of the Y sup
// norm: (e^{4 gamma |Y|} / gamma^2) (3 + 6 gamma T (beta |Y| + |l|)).
inline double universal_bmo_bound(double gamma, double beta, double T, double y_sup,
                                  double l_sup) {
    if (!(gamma > 0.0)) throw ConfigError("universal bounds need gamma > 0");
    if (beta < 0.0 || T < 0.0 || y_sup < 0.0 || l_sup < 0.0)
        throw ConfigError("universal bounds need nonnegative beta, horizon and sup norms");
    return std::exp(4.0 * gamma * y_sup) / (gamma * gamma) *
           (3.0 + 6.0 * gamma * T * (beta * y_sup + l_sup));
}

// Stability diagnostics for a pair of solutions of perturbed data. The
// proportionality constant is not estimated; callers sweep a shrinking
// perturbation and check that lhs/rhs stays bounded.
struct StabilityGapReport {
    double dz_bmo = 0.0;    // BMO norm (not squared) of the Z difference
    double dpsi_bmo = 0.0;  // BMO norm of the jump-slice difference, sup term included
    double lhs = 0.0;       // dz_bmo + dpsi_bmo
    double dy_sup = 0.0;
    double dxi_sup = 0.0;
    double df_tail_sup = 0.0;  // worst conditional tail of the absolute driver gap
    double rhs = 0.0;          // dy_sup + dxi_sup + df_tail_sup
    double ratio = 0.0;        // lhs / rhs, zero when rhs vanishes
};

inline StabilityGapReport stability_gap(const BsdeSolution& a, const BsdeSolution& b,
                                        double dxi_sup,
                                        const std::vector<std::vector<double>>& df_abs = {}) {
    detail::require_structure(a, "stability_gap");
    detail::require_structure(b, "stability_gap");
    if (!detail::same_shape(a, b))
        throw ConfigError("stability gap needs solutions on matched grids and node layouts");
    if (a.dim_z != b.dim_z || a.n_psi != b.n_psi)
        throw ConfigError("stability gap needs solutions with matching process dimensions");
    if (dxi_sup < 0.0) throw ConfigError("terminal gap must be nonnegative");

    const StepStructure& st = *a.structure;
    const int N = st.grid().n_steps;
    const double dt = st.grid().dt();

    std::vector<std::vector<double>> inc_z(static_cast<std::size_t>(N));
    std::vector<std::vector<double>> inc_psi(static_cast<std::size_t>(N));
    double dpsi_sup = 0.0;
    for (int i = 0; i < N; ++i) {
        inc_z[i].assign(st.n_nodes(i), 0.0);
        inc_psi[i].assign(st.n_nodes(i), 0.0);
        for (int node = 0; node < st.n_nodes(i); ++node) {
            auto za = a.z_at(i, node);
            auto zb = b.z_at(i, node);
            double sz = 0.0;
            for (int c = 0; c < a.dim_z; ++c) {
                const double d = za[c] - zb[c];
                sz += d * d;
            }
            inc_z[i][node] = sz * dt;
            auto pa = a.psi_at(i, node);
            auto pb = b.psi_at(i, node);
            double sp = 0.0;
            for (int j = 0; j < a.n_psi; ++j) {
                const double d = pa[j] - pb[j];
                sp += d * d * st.marks().rate_flat(j);
                dpsi_sup = std::max(dpsi_sup, std::abs(d));
            }
            inc_psi[i][node] = sp * dt;
        }
    }

    StabilityGapReport r;
    r.dz_bmo = std::sqrt(detail::tail_profile_max(st, inc_z).value);
    r.dpsi_bmo = std::sqrt(detail::tail_profile_max(st, inc_psi).value + dpsi_sup * dpsi_sup);
    r.lhs = r.dz_bmo + r.dpsi_bmo;

    for (std::size_t i = 0; i < a.y.size(); ++i)
        for (std::size_t node = 0; node < a.y[i].size(); ++node)
            r.dy_sup = std::max(r.dy_sup, std::abs(a.y[i][node] - b.y[i][node]));
    r.dxi_sup = dxi_sup;
    if (!df_abs.empty()) {
        if (static_cast<int>(df_abs.size()) != N)
            throw ConfigError("driver gap trace must cover every time step");
        std::vector<std::vector<double>> inc_f(static_cast<std::size_t>(N));
        for (int i = 0; i < N; ++i) {
            if (static_cast<int>(df_abs[i].size()) != st.n_nodes(i))
                throw ConfigError("driver gap trace must cover every node");
            inc_f[i].resize(st.n_nodes(i));
            for (int node = 0; node < st.n_nodes(i); ++node)
                inc_f[i][node] = std::abs(df_abs[i][node]) * dt;
        }
        r.df_tail_sup = detail::tail_profile_max(st, inc_f).value;
    }
    r.rhs = r.dy_sup + r.dxi_sup + r.df_tail_sup;
    r.ratio = r.rhs > 0.0 ? r.lhs / r.rhs : 0.0;
    return r;
}

// Node-wise comparison verdict for two solutions on the same structure.
struct ComparisonReport {
    bool leq = false;    // first <= second everywhere, within tolerance
    bool equal = false;  // |difference| <= tolerance everywhere
    double max_violation = 0.0;   // max(Y1 - Y2, 0) over all nodes
    double max_signed_gap = 0.0;  // max(Y1 - Y2), negative when strictly below
    double max_abs_gap = 0.0;
    double tolerance = 0.0;
};

inline ComparisonReport compare_solutions(const BsdeSolution& a, const BsdeSolution& b,
                                          double tolerance = 1e-12) {
    detail::require_structure(a, "compare_solutions");
    detail::require_structure(b, "compare_solutions");
    if (!detail::same_shape(a, b))
        throw ConfigError("comparison needs solutions on matched grids and node layouts");

    ComparisonReport r;
    r.tolerance = tolerance;
    r.max_signed_gap = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < a.y.size(); ++i)
        for (std::size_t node = 0; node < a.y[i].size(); ++node) {
            const double d = a.y[i][node] - b.y[i][node];
            r.max_signed_gap = std::max(r.max_signed_gap, d);
            r.max_abs_gap = std::max(r.max_abs_gap, std::abs(d));
        }
    r.max_violation = std::max(r.max_signed_gap, 0.0);
    r.leq = r.max_violation <= tolerance;
    r.equal = r.max_abs_gap <= tolerance;
    return r;
}

}  // namespace qexp
