#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qexp/driver.hpp"
#include "qexp/errors.hpp"
#include "qexp/marks.hpp"
#include "qexp/picard.hpp"
#include "qexp/presets.hpp"
#include "qexp/time_grid.hpp"

namespace qexp {

// Backend-neutral view of a discrete stochastic structure: nodes per grid
// step carrying forward states, reach weights, and conditional-expectation
// projections of next-slice values.  The lattice implements it with exact
// child sums, the path ensemble with least-squares projections; everything
// downstream (backward solves, norm estimators, derivative equations) only
// talks to this interface.
struct StepStructure {
    virtual ~StepStructure() = default;

    virtual const TimeGrid& grid() const = 0;
    virtual const MarkSpec& marks() const = 0;
    virtual int dim_x() const = 0;
    virtual int dim_w() const = 0;
    virtual int n_nodes(int step) const = 0;  // step in [0, n_steps]
    virtual std::span<const double> state(int step, int node) const = 0;
    virtual double node_weight(int step, int node) const = 0;  // sums to 1 per step

    // out[node] = E[next | node at step], next indexed by nodes at step+1.
    virtual void condexp(int step, std::span<const double> next, std::span<double> out) const = 0;

    // Same projection joint with the increments, raw (not divided by dt):
    //   ez[node*dim_w + c]  = E[next * dW_c   | node]
    //   epsi[node*J + j]    = E[next * dmu~_j | node]
    virtual void project(int step, std::span<const double> next, std::span<double> ey,
                         std::span<double> ez, std::span<double> epsi) const = 0;
};

// Driver evaluated per (step, node): derivative equations freeze coefficients
// along a base solution while reusing the same backward engine.
using NodeDriver = std::function<double(int step, int node, double t, double y,
                                        std::span<const double> z, std::span<const double> psi)>;

struct BsdeSolution {
    std::shared_ptr<const StepStructure> structure;
    int dim_z = 0;
    int n_psi = 0;
    std::vector<std::vector<double>> y;    // [step 0..N][node]
    std::vector<std::vector<double>> z;    // [step 0..N-1][node*dim_z]
    std::vector<std::vector<double>> psi;  // [step 0..N-1][node*n_psi]
    std::vector<int> picard_iters;         // per step, max over nodes
    std::vector<double> residuals;         // per step, worst final residual
    std::vector<std::string> warnings;

    std::span<const double> z_at(int step, int node) const {
        return {&z[step][static_cast<std::size_t>(node) * dim_z], static_cast<std::size_t>(dim_z)};
    }
    std::span<const double> psi_at(int step, int node) const {
        return {&psi[step][static_cast<std::size_t>(node) * n_psi],
                static_cast<std::size_t>(n_psi)};
    }

    double y0() const {
        double v = 0.0;
        for (int node = 0; node < structure->n_nodes(0); ++node)
            v += structure->node_weight(0, node) * y[0][node];
        return v;
    }
    double sup_y() const {
        double v = 0.0;
        for (const auto& slice : y)
            for (double w : slice) v = std::max(v, std::abs(w));
        return v;
    }
};

// What the backward engine needs to know about the driver beyond evaluation.
struct BackwardSpec {
    NodeDriver f;
    std::function<double(double)> lipschitz_profile;  // optional contraction check
    std::vector<std::string> warnings;                // seeded into the solution
};

inline BackwardSpec make_backward_spec(const DriverSpec& driver) {
    BackwardSpec s;
    s.f = [d = driver](int, int, double t, double y, std::span<const double> z,
                       std::span<const double> psi) { return d.f(t, y, z, psi); };
    s.lipschitz_profile = driver.lipschitz_profile;
    if (driver.quadratic_growth && !driver.regularized)
        s.warnings.push_back("driver '" + driver.name +
                             "' has superlinear z-growth and no mollification: the direct "
                             "fixed-point solve carries no convergence guarantee");
    return s;
}

namespace detail {

// Drivers that read the jump slice must agree with the model on the measure.
inline void check_driver_compat(const DriverSpec& d, const MarkSpec& model_marks, int dim_w) {
    if (d.dim_z != dim_w)
        throw ModelError("driver z-dimension (" + std::to_string(d.dim_z) +
                         ") must match the Brownian dimension (" + std::to_string(dim_w) + ")");
    if (d.marks.total_marks() == 0) return;  // driver ignores the jump slice
    if (d.marks.total_marks() != model_marks.total_marks())
        throw ModelError("driver and model disagree on the number of marks");
    for (int j = 0; j < model_marks.total_marks(); ++j)
        if (d.marks.mark_flat(j) != model_marks.mark_flat(j) ||
            d.marks.rate_flat(j) != model_marks.rate_flat(j))
            throw ModelError("driver and model mark measures differ");
}

}  // namespace detail

// Evaluate a terminal condition on the final node slice of any structure.
inline std::vector<double> terminal_slice(const StepStructure& st, const TerminalSpec& term) {
    if (!term.xi) throw ModelError("terminal condition needs an evaluation function");
    const int N = st.grid().n_steps;
    std::vector<double> xi(st.n_nodes(N));
    for (int node = 0; node < st.n_nodes(N); ++node) xi[node] = term.xi(st.state(N, node));
    return xi;
}

// Backward induction with explicit conditional-expectation estimators for
// (Z, psi) and a per-node fixed-point solve in y:
//   Z_i   = E_i[Y_{i+1} dW] / dt
//   psi_i = E_i[Y_{i+1} dmu~_j] / (lambda_j dt)
//   Y_i   = E_i[Y_{i+1}] + f(t_i, Y_i, Z_i, psi_i) dt.
inline BsdeSolution solve_backward(std::shared_ptr<const StepStructure> st,
                                   std::vector<double> terminal_values, const BackwardSpec& spec,
                                   const PicardOptions& opt = {}) {
    if (!spec.f) throw SolverError("backward solve needs a driver", 0);
    const TimeGrid& g = st->grid();
    const int N = g.n_steps;
    const double dt = g.dt();
    const int dw = st->dim_w();
    const int J = st->marks().total_marks();
    if (static_cast<int>(terminal_values.size()) != st->n_nodes(N))
        throw SolverError("terminal slice does not match the structure", N);

    BsdeSolution sol;
    sol.structure = st;
    sol.dim_z = dw;
    sol.n_psi = J;
    sol.y.resize(N + 1);
    sol.z.resize(N);
    sol.psi.resize(N);
    sol.picard_iters.assign(N, 0);
    sol.residuals.assign(N, 0.0);
    sol.warnings = spec.warnings;
    sol.y[N] = std::move(terminal_values);

    bool contraction_warned = false;
    bool exhausted_warned = false;
    std::vector<double> ey;
    for (int i = N - 1; i >= 0; --i) {
        const int nodes = st->n_nodes(i);
        const double t = g.t(i);
        sol.z[i].assign(static_cast<std::size_t>(nodes) * dw, 0.0);
        sol.psi[i].assign(static_cast<std::size_t>(nodes) * J, 0.0);
        ey.assign(nodes, 0.0);
        st->project(i, sol.y[i + 1], ey, sol.z[i], sol.psi[i]);
        for (double& v : sol.z[i]) v /= dt;
        for (int node = 0; node < nodes; ++node)
            for (int j = 0; j < J; ++j)
                sol.psi[i][static_cast<std::size_t>(node) * J + j] /=
                    st->marks().rate_flat(j) * dt;

        if (spec.lipschitz_profile && !contraction_warned) {
            double sup_next = 0.0;
            for (double v : sol.y[i + 1]) sup_next = std::max(sup_next, std::abs(v));
            if (spec.lipschitz_profile(sup_next + 1.0) * dt >= 1.0) {
                sol.warnings.push_back(
                    "dt * Lipschitz(K) >= 1 near step " + std::to_string(i) +
                    ": the per-step fixed point is not a guaranteed contraction");
                contraction_warned = true;
            }
        }

        sol.y[i].assign(nodes, 0.0);
        for (int node = 0; node < nodes; ++node) {
            const auto zs = sol.z_at(i, node);
            const auto ps = sol.psi_at(i, node);
            auto map = [&](double yy) { return ey[node] + spec.f(i, node, t, yy, zs, ps) * dt; };
            const auto out = picard_fixed_point(map, ey[node], opt, i);
            sol.y[i][node] = out.y;
            sol.picard_iters[i] = std::max(sol.picard_iters[i], out.iters);
            sol.residuals[i] = std::max(sol.residuals[i], out.residual);
            if (!out.converged && !exhausted_warned) {
                sol.warnings.push_back("Picard hit the iteration cap at step " + std::to_string(i) +
                                       " with residual " + std::to_string(out.residual));
                exhausted_warned = true;
            }
        }
    }
    return sol;
}

}  // namespace qexp
