#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qexp/driver.hpp"
#include "qexp/ensemble.hpp"
#include "qexp/errors.hpp"
#include "qexp/lattice.hpp"
#include "qexp/model.hpp"
#include "qexp/presets.hpp"
#include "qexp/regression.hpp"
#include "qexp/solution.hpp"

namespace qexp {

// A Markovian problem instance: forward dynamics plus the backward data.
struct MarkovProblem {
    LevyModel model;
    DriverSpec driver;
    TerminalSpec terminal;
};

// Differentiation direction: a Brownian component or a (direction, mark) jump
// channel, at a differentiation time s.
struct DerivativeDirection {
    enum class Kind { wiener, jump };
    Kind kind = Kind::wiener;
    int component = 0;   // Brownian component, or jump direction
    int mark_index = 0;  // jump kind only
    double s = 0.0;

    static DerivativeDirection wiener(int component, double s) {
        DerivativeDirection d;
        d.kind = Kind::wiener;
        d.component = component;
        d.s = s;
        return d;
    }
    static DerivativeDirection jump(int direction, int mark_index, double s) {
        DerivativeDirection d;
        d.kind = Kind::jump;
        d.component = direction;
        d.mark_index = mark_index;
        d.s = s;
        return d;
    }

    std::string label() const {
        if (kind == Kind::wiener) return "wiener[" + std::to_string(component) + "]";
        return "jump[" + std::to_string(component) + "] mark " + std::to_string(mark_index);
    }
};

namespace detail {

inline void check_direction(const DerivativeDirection& dir, const LevyModel& model) {
    if (dir.kind == DerivativeDirection::Kind::wiener) {
        if (dir.component < 0 || dir.component >= model.dim_w)
            throw ConfigError("derivative direction names Brownian component " +
                              std::to_string(dir.component) + " but the model has " +
                              std::to_string(model.dim_w));
        return;
    }
    if (dir.component < 0 || dir.component >= model.marks.directions())
        throw ConfigError("derivative direction names jump direction " +
                          std::to_string(dir.component) + " but the model has " +
                          std::to_string(model.marks.directions()));
    if (dir.mark_index < 0 || dir.mark_index >= model.marks.marks_in(dir.component))
        throw ConfigError("derivative mark index out of range");
    if (model.marks.mark(dir.component, dir.mark_index) == 0.0)
        throw ConfigError("jump derivatives need a nonzero mark");
}

inline int derivative_start(const TimeGrid& grid, double s) {
    return std::min(grid.snap(s), grid.n_steps - 1);
}

// Directional state-derivatives of the model coefficients; analytic when the
// model provides them, central differences along the direction otherwise.
inline double coeff_bump(std::span<const double> x, std::span<const double> v) {
    double xs = 0.0, vs = 0.0;
    for (double q : x) xs = std::max(xs, std::abs(q));
    for (double q : v) vs = std::max(vs, std::abs(q));
    return 1e-4 * (1.0 + xs) / std::max(1.0, vs);
}

template <class Eval>
void dir_deriv(std::span<const double> x, std::span<const double> v, std::span<double> out,
               Eval&& eval) {
    const double h = coeff_bump(x, v);
    std::vector<double> xb(x.begin(), x.end());
    std::vector<double> up(out.size()), dn(out.size());
    for (std::size_t q = 0; q < x.size(); ++q) xb[q] = x[q] + h * v[q];
    eval(xb, std::span<double>(up));
    for (std::size_t q = 0; q < x.size(); ++q) xb[q] = x[q] - h * v[q];
    eval(xb, std::span<double>(dn));
    for (std::size_t q = 0; q < out.size(); ++q) out[q] = (up[q] - dn[q]) / (2.0 * h);
}

inline void drift_deriv(const LevyModel& m, double t, std::span<const double> x,
                        std::span<const double> v, std::span<double> out) {
    if (m.drift_dx) {
        m.drift_dx(t, x, v, out);
        return;
    }
    dir_deriv(x, v, out, [&](std::span<const double> xx, std::span<double> o) { m.drift(t, xx, o); });
}

inline void vol_deriv(const LevyModel& m, double t, std::span<const double> x,
                      std::span<const double> v, std::span<double> out) {
    if (m.vol_dx) {
        m.vol_dx(t, x, v, out);
        return;
    }
    dir_deriv(x, v, out, [&](std::span<const double> xx, std::span<double> o) { m.vol(t, xx, o); });
}

inline void jump_deriv(const LevyModel& m, double t, std::span<const double> x, int d, double mark,
                       std::span<const double> v, std::span<double> out) {
    if (m.jump_dx) {
        m.jump_dx(t, x, d, mark, v, out);
        return;
    }
    dir_deriv(x, v, out,
              [&](std::span<const double> xx, std::span<double> o) { m.jump_coeff(t, xx, d, mark, o); });
}

}  // namespace detail

// Forward derivative values aligned with a structure's (step, node) indexing;
// identically zero before the differentiation node.
struct DerivativeField {
    DerivativeDirection direction;
    int start_step = 0;
    int dim_x = 1;
    bool uniform = false;  // one value per step: state-independent flows
    std::vector<std::vector<double>> dx;  // uniform ? [step][q] : [step][node*dim_x+q]

    std::span<const double> at(int step, int node) const {
        const auto& slice = dx[step];
        const std::size_t off = uniform ? 0 : static_cast<std::size_t>(node) * dim_x;
        return {slice.data() + off, static_cast<std::size_t>(dim_x)};
    }
};

// Pathwise forward derivative: the variational propagation of a Brownian bump
// (differentiating the Euler map step by step), or the difference quotient of
// the states after a deterministic jump insertion.
inline DerivativeField forward_derivative_paths(const LevyModel& model, const PathEnsemble& paths,
                                                const DerivativeDirection& dir) {
    model.validate();
    detail::check_direction(dir, model);
    if (paths.dim_x != model.dim_x || paths.dim_w != model.dim_w)
        throw ModelError("ensemble dimensions do not match the model");
    const TimeGrid& g = paths.grid;
    const int N = g.n_steps;
    const int nx = model.dim_x;
    const int is = detail::derivative_start(g, dir.s);

    DerivativeField field;
    field.direction = dir;
    field.start_step = is;
    field.dim_x = nx;
    field.dx.assign(static_cast<std::size_t>(N) + 1,
                    std::vector<double>(static_cast<std::size_t>(paths.n_paths) * nx, 0.0));

    if (dir.kind == DerivativeDirection::Kind::jump) {
        const double z = model.marks.mark(dir.component, dir.mark_index);
        PathEnsemble bumped = insert_jump(paths, model, dir.s, dir.component, dir.mark_index);
        std::vector<double> jv(nx);
        for (int p = 0; p < paths.n_paths; ++p) {
            // value at s itself: jump coefficient over the mark, at the
            // pre-jump state
            model.jump_coeff(g.t(is), paths.state(p, is), dir.component, z, jv);
            for (int q = 0; q < nx; ++q)
                field.dx[is][static_cast<std::size_t>(p) * nx + q] = jv[q] / z;
            for (int node = is + 1; node <= N; ++node) {
                auto xa = paths.state(p, node);
                auto xb = bumped.state(p, node);
                for (int q = 0; q < nx; ++q)
                    field.dx[node][static_cast<std::size_t>(p) * nx + q] = (xb[q] - xa[q]) / z;
            }
        }
        return field;
    }

    const double dt = g.dt();
    const int nw = model.dim_w;
    std::vector<double> cur(nx), nxt(nx), volcol(static_cast<std::size_t>(nx) * nw);
    std::vector<double> db(nx), ds(static_cast<std::size_t>(nx) * nw), dj(nx);
    for (int p = 0; p < paths.n_paths; ++p) {
        // The bump enters the Euler step at `is` through the vol column alone,
        // so the derivative at node is+1 equals sigma there exactly; the value
        // reported at s uses the same column.
        model.vol(g.t(is), paths.state(p, is), volcol);
        for (int q = 0; q < nx; ++q)
            cur[q] = volcol[static_cast<std::size_t>(q) * nw + dir.component];
        for (int q = 0; q < nx; ++q)
            field.dx[is][static_cast<std::size_t>(p) * nx + q] = cur[q];
        if (is + 1 <= N)
            for (int q = 0; q < nx; ++q)
                field.dx[is + 1][static_cast<std::size_t>(p) * nx + q] = cur[q];
        for (int i = is + 1; i < N; ++i) {
            const double t = g.t(i);
            auto x = paths.state(p, i);
            detail::drift_deriv(model, t, x, cur, db);
            for (int q = 0; q < nx; ++q) nxt[q] = cur[q] + db[q] * dt;
            if (nw > 0) {
                detail::vol_deriv(model, t, x, cur, ds);
                for (int c = 0; c < nw; ++c) {
                    const double dw = paths.dw_at(p, i, c);
                    for (int q = 0; q < nx; ++q) nxt[q] += ds[static_cast<std::size_t>(q) * nw + c] * dw;
                }
            }
            for (int d = 0; d < model.marks.directions(); ++d)
                for (int j = 0; j < model.marks.marks_in(d); ++j) {
                    const double compensated =
                        paths.jump_count(p, i, d, j) - model.marks.rate(d, j) * dt;
                    if (compensated != 0.0) {
                        detail::jump_deriv(model, t, x, d, model.marks.mark(d, j), cur, dj);
                        for (int q = 0; q < nx; ++q) nxt[q] += dj[q] * compensated;
                    }
                }
            for (int q = 0; q < nx; ++q)
                field.dx[i + 1][static_cast<std::size_t>(p) * nx + q] = nxt[q];
            std::swap(cur, nxt);
        }
    }
    return field;
}

// Deterministic derivative flow for state-independent coefficients: the
// variational equation has zero linear term, so the field is constant from
// the differentiation node on. Serves lattice structures, whose nodes all
// share it.
inline DerivativeField forward_derivative_uniform(const LevyModel& model, const TimeGrid& grid,
                                                  const DerivativeDirection& dir) {
    model.validate();
    detail::check_direction(dir, model);
    if (!model.additive)
        throw ConfigError(
            "state-dependent coefficients need the path backend for derivative flows");
    const int N = grid.n_steps;
    const int nx = model.dim_x;
    const int is = detail::derivative_start(grid, dir.s);

    std::vector<double> v(nx, 0.0);
    if (dir.kind == DerivativeDirection::Kind::wiener) {
        std::vector<double> volcol(static_cast<std::size_t>(nx) * model.dim_w);
        model.vol(grid.t(is), model.x0, volcol);
        for (int q = 0; q < nx; ++q)
            v[q] = volcol[static_cast<std::size_t>(q) * model.dim_w + dir.component];
    } else {
        const double z = model.marks.mark(dir.component, dir.mark_index);
        model.jump_coeff(grid.t(is), model.x0, dir.component, z, v);
        for (int q = 0; q < nx; ++q) v[q] /= z;
    }

    DerivativeField field;
    field.direction = dir;
    field.start_step = is;
    field.dim_x = nx;
    field.uniform = true;
    field.dx.assign(static_cast<std::size_t>(N) + 1, std::vector<double>(nx, 0.0));
    for (int i = is; i <= N; ++i) field.dx[i] = v;
    return field;
}

// Derivative triple (value, Brownian slice, jump slice) of a solved BSDE in
// one differentiation direction; identically zero before the differentiation
// node by convention.
struct MalliavinSolution {
    DerivativeDirection direction;
    int start_step = 0;
    BsdeSolution process;
};

namespace detail {

inline void zero_before_start(BsdeSolution& sol, int start) {
    for (int i = 0; i < start; ++i) {
        std::fill(sol.y[i].begin(), sol.y[i].end(), 0.0);
        std::fill(sol.z[i].begin(), sol.z[i].end(), 0.0);
        std::fill(sol.psi[i].begin(), sol.psi[i].end(), 0.0);
    }
}

// Frozen first-order coefficients of the driver along a base solution;
// analytic partials when the driver carries them, central differences
// otherwise.
struct FrozenCoefficients {
    int dim_z = 0;
    int n_psi = 0;
    std::vector<std::vector<double>> fy;    // [step][node]
    std::vector<std::vector<double>> fz;    // [step][node*dim_z]
    std::vector<std::vector<double>> fpsi;  // [step][node*n_psi]
    double lipschitz = 0.0;
};

inline FrozenCoefficients freeze_driver(const DriverSpec& d, const BsdeSolution& base) {
    const StepStructure& st = *base.structure;
    const int N = st.grid().n_steps;
    FrozenCoefficients fc;
    fc.dim_z = base.dim_z;
    fc.n_psi = base.n_psi;
    fc.fy.resize(N);
    fc.fz.resize(N);
    fc.fpsi.resize(N);
    // a driver with no marks of its own ignores the jump slice entirely
    const bool reads_psi = d.marks.total_marks() > 0;
    for (int i = 0; i < N; ++i) {
        const int nodes = st.n_nodes(i);
        const double t = st.grid().t(i);
        fc.fy[i].assign(nodes, 0.0);
        fc.fz[i].assign(static_cast<std::size_t>(nodes) * fc.dim_z, 0.0);
        fc.fpsi[i].assign(static_cast<std::size_t>(nodes) * fc.n_psi, 0.0);
        for (int node = 0; node < nodes; ++node) {
            const double y = base.y[i][node];
            auto z = base.z_at(i, node);
            auto psi = base.psi_at(i, node);
            fc.fy[i][node] = driver_dy(d, t, y, z, psi);
            if (fc.dim_z > 0)
                driver_dz(d, t, y, z, psi,
                          {&fc.fz[i][static_cast<std::size_t>(node) * fc.dim_z],
                           static_cast<std::size_t>(fc.dim_z)});
            if (fc.n_psi > 0 && reads_psi)
                driver_dpsi(d, t, y, z, psi,
                            {&fc.fpsi[i][static_cast<std::size_t>(node) * fc.n_psi],
                             static_cast<std::size_t>(fc.n_psi)});
            double k = std::abs(fc.fy[i][node]);
            double s2 = 0.0;
            for (int c = 0; c < fc.dim_z; ++c) {
                const double v = fc.fz[i][static_cast<std::size_t>(node) * fc.dim_z + c];
                s2 += v * v;
            }
            k += std::sqrt(s2);
            for (int j = 0; j < fc.n_psi; ++j)
                k += std::abs(fc.fpsi[i][static_cast<std::size_t>(node) * fc.n_psi + j]);
            fc.lipschitz = std::max(fc.lipschitz, k);
        }
    }
    return fc;
}

}  // namespace detail

// Brownian-direction derivative BSDE: linear driver with coefficients frozen
// along the base solution, terminal grad(xi) . DX_T. Drivers here read
// (t, y, z, psi) only, so the state enters purely through the terminal and
// the frozen coefficients; there is no separate driver source term.
inline MalliavinSolution solve_malliavin_wiener(const BsdeSolution& base,
                                                const MarkovProblem& problem,
                                                const DerivativeField& field,
                                                const PicardOptions& opt = {}) {
    if (!base.structure) throw ConfigError("derivative solve needs a solved base with structure");
    if (field.direction.kind != DerivativeDirection::Kind::wiener)
        throw ConfigError("Brownian-direction solve got a jump direction");
    const StepStructure& st = *base.structure;
    const int N = st.grid().n_steps;
    if (static_cast<int>(field.dx.size()) != N + 1 || field.dim_x != st.dim_x())
        throw ConfigError("derivative field does not match the structure");

    auto fc = std::make_shared<detail::FrozenCoefficients>(
        detail::freeze_driver(problem.driver, base));

    std::vector<double> terminal(st.n_nodes(N), 0.0);
    std::vector<double> grad(st.dim_x());
    for (int node = 0; node < st.n_nodes(N); ++node) {
        terminal_grad(problem.terminal, st.state(N, node), grad);
        auto dxn = field.at(N, node);
        double v = 0.0;
        for (int q = 0; q < st.dim_x(); ++q) v += grad[q] * dxn[q];
        terminal[node] = v;
    }

    BackwardSpec spec;
    spec.f = [fc](int step, int node, double, double dy, std::span<const double> dz,
                  std::span<const double> dpsi) {
        double v = fc->fy[step][node] * dy;
        for (int c = 0; c < fc->dim_z; ++c)
            v += fc->fz[step][static_cast<std::size_t>(node) * fc->dim_z + c] * dz[c];
        for (int j = 0; j < fc->n_psi; ++j)
            v += fc->fpsi[step][static_cast<std::size_t>(node) * fc->n_psi + j] * dpsi[j];
        return v;
    };
    spec.lipschitz_profile = [k = fc->lipschitz](double) { return k; };

    MalliavinSolution out;
    out.direction = field.direction;
    out.start_step = field.start_step;
    out.process = solve_backward(base.structure, std::move(terminal), spec, opt);
    detail::zero_before_start(out.process, out.start_step);
    return out;
}

inline MalliavinSolution solve_malliavin_wiener(const BsdeSolution& base,
                                                const MarkovProblem& problem,
                                                const DerivativeDirection& dir,
                                                const PicardOptions& opt = {}) {
    if (!base.structure) throw ConfigError("derivative solve needs a solved base with structure");
    if (auto* ens = dynamic_cast<const EnsembleStructure*>(base.structure.get()))
        return solve_malliavin_wiener(base, problem,
                                      forward_derivative_paths(problem.model, ens->paths(), dir),
                                      opt);
    return solve_malliavin_wiener(
        base, problem, forward_derivative_uniform(problem.model, base.structure->grid(), dir), opt);
}

namespace detail {

// Difference quotient of two solutions living on the same node layout; values
// strictly before the differentiation node are zeroed by convention.
inline MalliavinSolution quotient_solution(const BsdeSolution& plain, const BsdeSolution& bumped,
                                           const DerivativeDirection& dir, int start, double z) {
    MalliavinSolution out;
    out.direction = dir;
    out.start_step = start;
    out.process = plain;
    for (std::size_t i = 0; i < plain.y.size(); ++i)
        for (std::size_t n = 0; n < plain.y[i].size(); ++n)
            out.process.y[i][n] = (bumped.y[i][n] - plain.y[i][n]) / z;
    for (std::size_t i = 0; i < plain.z.size(); ++i) {
        for (std::size_t n = 0; n < plain.z[i].size(); ++n)
            out.process.z[i][n] = (bumped.z[i][n] - plain.z[i][n]) / z;
        for (std::size_t n = 0; n < plain.psi[i].size(); ++n)
            out.process.psi[i][n] = (bumped.psi[i][n] - plain.psi[i][n]) / z;
        out.process.picard_iters[i] = std::max(plain.picard_iters[i], bumped.picard_iters[i]);
        out.process.residuals[i] = std::max(plain.residuals[i], bumped.residuals[i]);
    }
    for (const auto& w : bumped.warnings)
        if (std::find(out.process.warnings.begin(), out.process.warnings.end(), w) ==
            out.process.warnings.end())
            out.process.warnings.push_back(w);
    detail::zero_before_start(out.process, start);
    return out;
}

}  // namespace detail

// Jump-direction derivative on the path backend: solve the BSDE on the
// original ensemble and on the ensemble with one inserted jump, then take the
// difference quotient over the mark value.
inline MalliavinSolution solve_malliavin_jump(const MarkovProblem& problem,
                                              const PathEnsemble& paths,
                                              const DerivativeDirection& dir,
                                              const RegressionBasis& basis = {},
                                              const PicardOptions& opt = {}) {
    detail::check_direction(dir, problem.model);
    if (dir.kind != DerivativeDirection::Kind::jump)
        throw ConfigError("jump-direction solve got a Brownian direction");
    const double z = problem.model.marks.mark(dir.component, dir.mark_index);
    const int start = detail::derivative_start(paths.grid, dir.s);

    PathEnsemble bumped = insert_jump(paths, problem.model, dir.s, dir.component, dir.mark_index);
    auto st_a = build_regression_structure(problem.model, paths, basis);
    auto st_b = build_regression_structure(problem.model, std::move(bumped), basis);
    auto sol_a = solve_regression(st_a, problem.driver, problem.terminal, opt);
    auto sol_b = solve_regression(st_b, problem.driver, problem.terminal, opt);
    return detail::quotient_solution(sol_a, sol_b, dir, start, z);
}

// Jump-direction derivative on the lattice: an inserted jump under
// state-independent coefficients shifts every later state by the same vector,
// so the bumped BSDE is the same lattice solved with a shifted terminal.
inline MalliavinSolution solve_malliavin_jump(const MarkovProblem& problem,
                                              std::shared_ptr<const LatticeStructure> lat,
                                              const DerivativeDirection& dir,
                                              const PicardOptions& opt = {}) {
    detail::check_direction(dir, problem.model);
    if (dir.kind != DerivativeDirection::Kind::jump)
        throw ConfigError("jump-direction solve got a Brownian direction");
    if (!problem.model.additive)
        throw ConfigError(
            "deterministic jump insertion on the lattice needs state-independent coefficients");
    const TimeGrid& g = lat->grid();
    const double z = problem.model.marks.mark(dir.component, dir.mark_index);
    const int start = detail::derivative_start(g, dir.s);

    std::vector<double> shift(problem.model.dim_x);
    problem.model.jump_coeff(g.t(start), problem.model.x0, dir.component, z, shift);

    TerminalSpec shifted = problem.terminal;
    shifted.xi = [inner = problem.terminal.xi, shift](std::span<const double> x) {
        std::vector<double> xs(x.begin(), x.end());
        for (std::size_t q = 0; q < xs.size(); ++q) xs[q] += shift[q];
        return inner(xs);
    };
    if (problem.terminal.grad)
        shifted.grad = [inner = problem.terminal.grad, shift](std::span<const double> x,
                                                              std::span<double> out) {
            std::vector<double> xs(x.begin(), x.end());
            for (std::size_t q = 0; q < xs.size(); ++q) xs[q] += shift[q];
            inner(xs, out);
        };

    auto sol_a = solve_lattice(lat, problem.driver, problem.terminal, opt);
    auto sol_b = solve_lattice(lat, problem.driver, shifted, opt);
    return detail::quotient_solution(sol_a, sol_b, dir, start, z);
}

// The same jump derivative assembled as a single BSDE: driver and terminal
// are difference quotients of the base problem at bump size z, step by step
// the identical recursion the two-solve difference performs.
inline MalliavinSolution solve_jump_derivative_direct(const BsdeSolution& base,
                                                      const MarkovProblem& problem,
                                                      const DerivativeDirection& dir,
                                                      const PicardOptions& opt = {}) {
    detail::check_direction(dir, problem.model);
    if (dir.kind != DerivativeDirection::Kind::jump)
        throw ConfigError("jump-direction solve got a Brownian direction");
    if (!base.structure) throw ConfigError("derivative solve needs a solved base with structure");
    if (!problem.model.additive)
        throw ConfigError(
            "deterministic jump insertion on the lattice needs state-independent coefficients");
    const StepStructure& st = *base.structure;
    const TimeGrid& g = st.grid();
    const int N = g.n_steps;
    const double z = problem.model.marks.mark(dir.component, dir.mark_index);
    const int start = detail::derivative_start(g, dir.s);

    std::vector<double> shift(problem.model.dim_x);
    problem.model.jump_coeff(g.t(start), problem.model.x0, dir.component, z, shift);

    std::vector<double> terminal(st.n_nodes(N));
    std::vector<double> xs(problem.model.dim_x);
    for (int node = 0; node < st.n_nodes(N); ++node) {
        auto x = st.state(N, node);
        for (int q = 0; q < problem.model.dim_x; ++q) xs[q] = x[q] + shift[q];
        terminal[node] = (problem.terminal.xi(xs) - problem.terminal.xi(x)) / z;
    }

    struct BasePoint {
        const BsdeSolution* base;
        double z;
    };
    auto bp = std::make_shared<BasePoint>(BasePoint{&base, z});
    BackwardSpec spec;
    spec.f = [bp, f = problem.driver.f](int step, int node, double t, double dy,
                                        std::span<const double> dz, std::span<const double> dpsi) {
        const BsdeSolution& b = *bp->base;
        const double y0 = b.y[step][node];
        auto z0 = b.z_at(step, node);
        auto p0 = b.psi_at(step, node);
        std::vector<double> zb(z0.begin(), z0.end());
        std::vector<double> pb(p0.begin(), p0.end());
        for (std::size_t c = 0; c < zb.size(); ++c) zb[c] += bp->z * dz[c];
        for (std::size_t j = 0; j < pb.size(); ++j) pb[j] += bp->z * dpsi[j];
        return (f(t, y0 + bp->z * dy, zb, pb) - f(t, y0, z0, p0)) / bp->z;
    };

    MalliavinSolution out;
    out.direction = dir;
    out.start_step = start;
    out.process = solve_backward(base.structure, std::move(terminal), spec, opt);
    detail::zero_before_start(out.process, start);
    return out;
}

// Central difference of the value function at the initial state, component q,
// on the lattice backend (deterministic, inherently common-noise).
inline double finite_difference_oracle(const MarkovProblem& problem, const TimeGrid& grid, int q,
                                       double h, const PicardOptions& opt = {}) {
    if (!(h > 0.0)) throw ConfigError("finite difference needs a positive bump");
    if (q < 0 || q >= problem.model.dim_x) throw ConfigError("bump component out of range");
    auto value_at = [&](double sign) {
        LevyModel m = problem.model;
        m.x0[q] += sign * h;
        return solve_lattice(m, grid, problem.driver, problem.terminal, opt).y0();
    };
    return (value_at(1.0) - value_at(-1.0)) / (2.0 * h);
}

// Monte-Carlo variant: both bumped solves reuse the same seed, so the noise
// is common and the difference cancels most of the sampling error.
inline double finite_difference_oracle_mc(const MarkovProblem& problem, const TimeGrid& grid,
                                          int q, double h, int n_paths, std::uint64_t seed,
                                          const RegressionBasis& basis = {},
                                          const PicardOptions& opt = {}) {
    if (!(h > 0.0)) throw ConfigError("finite difference needs a positive bump");
    if (q < 0 || q >= problem.model.dim_x) throw ConfigError("bump component out of range");
    auto value_at = [&](double sign) {
        LevyModel m = problem.model;
        m.x0[q] += sign * h;
        return solve_regression(m, grid, n_paths, seed, problem.driver, problem.terminal, basis,
                                opt)
            .y0();
    };
    return (value_at(1.0) - value_at(-1.0)) / (2.0 * h);
}

// Representation diagnostics: derivative-at-s vs the solved slices, and the
// value-function form of both, each row an independent left/right pair.
struct RepresentationRow {
    double s = 0.0;
    std::string direction;
    std::string quantity;
    double lhs = 0.0;
    double rhs = 0.0;
    double abs_error = 0.0;
    double rel_error = 0.0;
};

struct RepresentationDiagnostics {
    std::vector<RepresentationRow> rows;
    std::string note;

    double max_abs_error() const {
        double v = 0.0;
        for (const auto& r : rows) v = std::max(v, r.abs_error);
        return v;
    }
};

struct RepresentationOptions {
    std::vector<double> fractions = {0.25, 0.5, 0.75};  // sample times as horizon fractions
    double bump = 1e-3;  // relative state bump for value-function differences
    PicardOptions picard{};
};

namespace detail {

inline RepresentationRow max_error_row(double s, std::string direction, std::string quantity,
                                       const std::vector<double>& lhs,
                                       const std::vector<double>& rhs) {
    RepresentationRow row;
    row.s = s;
    row.direction = std::move(direction);
    row.quantity = std::move(quantity);
    for (std::size_t n = 0; n < lhs.size(); ++n) {
        const double err = std::abs(lhs[n] - rhs[n]);
        if (err >= row.abs_error) {
            row.abs_error = err;
            row.lhs = lhs[n];
            row.rhs = rhs[n];
        }
    }
    row.rel_error = row.abs_error / (std::abs(row.rhs) + 1e-12);
    return row;
}

}  // namespace detail

inline RepresentationDiagnostics check_representation(const MarkovProblem& problem,
                                                      std::shared_ptr<const LatticeStructure> lat,
                                                      const RepresentationOptions& ropt = {}) {
    const TimeGrid& g = lat->grid();
    const int N = g.n_steps;
    auto base = solve_lattice(lat, problem.driver, problem.terminal, ropt.picard);

    RepresentationDiagnostics diag;
    diag.note =
        "predictable projections are compared at the differentiation node itself; at grid "
        "resolution the left limit is the node value. Value-function rows need scalar state.";

    for (double frac : ropt.fractions) {
        const int is = std::clamp(static_cast<int>(std::lround(frac * N)), 1, N - 1);
        const double s = g.t(is);
        const int nodes = lat->n_nodes(is);

        // reference node for the value-function rows: the likeliest state
        int ref = 0;
        for (int node = 1; node < nodes; ++node)
            if (lat->node_weight(is, node) > lat->node_weight(is, ref)) ref = node;

        for (int c = 0; c < problem.model.dim_w; ++c) {
            auto dir = DerivativeDirection::wiener(c, s);
            auto D = solve_malliavin_wiener(base, problem, dir, ropt.picard);
            std::vector<double> lhs(nodes), rhs(nodes);
            for (int node = 0; node < nodes; ++node) {
                lhs[node] = D.process.y[is][node];
                rhs[node] = base.z_at(is, node)[c];
            }
            diag.rows.push_back(
                detail::max_error_row(s, dir.label(), "derivative value vs z slice", lhs, rhs));
        }

        for (int d = 0; d < problem.model.marks.directions(); ++d) {
            int j = -1;
            for (int k = 0; k < problem.model.marks.marks_in(d); ++k)
                if (problem.model.marks.mark(d, k) != 0.0) {
                    j = k;
                    break;
                }
            if (j < 0) continue;
            const double z = problem.model.marks.mark(d, j);
            auto dir = DerivativeDirection::jump(d, j, s);
            auto D = solve_malliavin_jump(problem, lat, dir, ropt.picard);
            const int flat = problem.model.marks.flat(d, j);
            std::vector<double> lhs(nodes), rhs(nodes);
            for (int node = 0; node < nodes; ++node) {
                lhs[node] = z * D.process.y[is][node];
                rhs[node] = base.psi_at(is, node)[flat];
            }
            diag.rows.push_back(detail::max_error_row(s, dir.label(),
                                                      "mark-scaled derivative vs psi slice", lhs,
                                                      rhs));
        }

        if (problem.model.dim_x != 1) continue;
        const double x_ref = lat->state(is, ref)[0];
        const TimeGrid sub{s, g.horizon, N - is};
        auto value_from = [&](double x) {
            LevyModel m = problem.model;
            m.x0 = {x};
            return solve_lattice(m, sub, problem.driver, problem.terminal, ropt.picard).y0();
        };
        const double h = ropt.bump * (1.0 + std::abs(x_ref));
        const double grad_u = (value_from(x_ref + h) - value_from(x_ref - h)) / (2.0 * h);
        std::vector<double> vol(problem.model.dim_w);
        problem.model.vol(s, std::span<const double>(&x_ref, 1), vol);
        for (int c = 0; c < problem.model.dim_w; ++c) {
            RepresentationRow row;
            row.s = s;
            row.direction = DerivativeDirection::wiener(c, s).label();
            row.quantity = "z slice vs value-function gradient";
            row.lhs = base.z_at(is, ref)[c];
            row.rhs = grad_u * vol[c];
            row.abs_error = std::abs(row.lhs - row.rhs);
            row.rel_error = row.abs_error / (std::abs(row.rhs) + 1e-12);
            diag.rows.push_back(row);
        }
        for (int d = 0; d < problem.model.marks.directions(); ++d) {
            int j = -1;
            for (int k = 0; k < problem.model.marks.marks_in(d); ++k)
                if (problem.model.marks.mark(d, k) != 0.0) {
                    j = k;
                    break;
                }
            if (j < 0) continue;
            const double z = problem.model.marks.mark(d, j);
            std::vector<double> gv(1);
            problem.model.jump_coeff(s, std::span<const double>(&x_ref, 1), d, z, gv);
            RepresentationRow row;
            row.s = s;
            row.direction = DerivativeDirection::jump(d, j, s).label();
            row.quantity = "psi slice vs value-function shift";
            row.lhs = base.psi_at(is, ref)[problem.model.marks.flat(d, j)];
            row.rhs = value_from(x_ref + gv[0]) - value_from(x_ref);
            row.abs_error = std::abs(row.lhs - row.rhs);
            row.rel_error = row.abs_error / (std::abs(row.rhs) + 1e-12);
            diag.rows.push_back(row);
        }
    }
    return diag;
}

}  // namespace qexp
