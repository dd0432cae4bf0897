#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "qexp/errors.hpp"
#include "qexp/model.hpp"
#include "qexp/rng.hpp"
#include "qexp/time_grid.hpp"

namespace qexp {

struct JumpEvent {
    double time;     // raw arrival time
    int step;        // grid step whose interval absorbs the jump
    int mark_index;  // index within the direction's mark list
};

// Simulated scenario block: increments, jump events, and the Euler forward
// states.  X is stored at nodes 0..n_steps (dim_x values per node); dW at
// steps 0..n_steps-1 (dim_w values per step).
struct PathEnsemble {
    TimeGrid grid;
    int n_paths = 0;
    int dim_x = 1;
    int dim_w = 1;
    std::uint64_t seed = 0;

    std::vector<std::vector<double>> dw;                  // [path][step*dim_w + c]
    std::vector<std::vector<std::vector<JumpEvent>>> jumps;  // [path][direction][events]
    std::vector<std::vector<double>> x;                   // [path][node*dim_x + q]

    std::span<const double> state(int path, int node) const {
        return {&x[path][static_cast<std::size_t>(node) * dim_x], static_cast<std::size_t>(dim_x)};
    }
    double dw_at(int path, int step, int c) const { return dw[path][static_cast<std::size_t>(step) * dim_w + c]; }

    // Jump count of (direction, mark j) inside a given step.
    int jump_count(int path, int step, int dir, int j) const {
        int n = 0;
        for (const auto& e : jumps[path][dir])
            if (e.step == step && e.mark_index == j) ++n;
        return n;
    }
};

namespace detail {

// One Euler step shared by simulation, re-propagation and derivative flows.
// Jumps within a step all act on the pre-step state; the compensator uses the
// same evaluation point, so the step integrator is the compensated measure.
inline void euler_step(const LevyModel& model, const TimeGrid& grid, int step,
                       std::span<const double> x_in, std::span<const double> dw_step,
                       std::span<const int> jump_counts, std::span<double> x_out,
                       std::vector<double>& scratch) {
    const double t = grid.t(step);
    const double dt = grid.dt();
    const int nx = model.dim_x;
    const int nw = model.dim_w;
    scratch.resize(static_cast<std::size_t>(nx) * std::max(nw, 1) + nx);
    std::span<double> coeff(scratch.data(), static_cast<std::size_t>(nx) * std::max(nw, 1));
    std::span<double> jv(scratch.data() + coeff.size(), nx);

    model.drift(t, x_in, coeff);
    for (int q = 0; q < nx; ++q) x_out[q] = x_in[q] + coeff[q] * dt;
    if (nw > 0) {
        model.vol(t, x_in, coeff);
        for (int c = 0; c < nw; ++c)
            for (int q = 0; q < nx; ++q) x_out[q] += coeff[static_cast<std::size_t>(q) * nw + c] * dw_step[c];
    }
    for (int d = 0; d < model.marks.directions(); ++d) {
        for (int j = 0; j < model.marks.marks_in(d); ++j) {
            const int count = jump_counts[model.marks.flat(d, j)];
            const double compensated = count - model.marks.rate(d, j) * dt;
            if (compensated != 0.0) {
                model.jump_coeff(t, x_in, d, model.marks.mark(d, j), jv);
                for (int q = 0; q < nx; ++q) x_out[q] += jv[q] * compensated;
            }
        }
    }
}

inline std::vector<int> step_jump_counts(const PathEnsemble& e, const MarkSpec& marks, int path,
                                         int step) {
    std::vector<int> counts(static_cast<std::size_t>(std::max(1, marks.total_marks())), 0);
    for (int d = 0; d < marks.directions(); ++d)
        for (const auto& ev : e.jumps[path][d])
            if (ev.step == step) ++counts[marks.flat(d, ev.mark_index)];
    return counts;
}

}  // namespace detail

// Recompute the forward states of one path from its stored noise.  Exposed so
// adaptedness and re-propagation behave identically everywhere.
inline void propagate_path(const LevyModel& model, PathEnsemble& e, int path, int from_step = 0) {
    std::vector<double> scratch;
    const int nx = model.dim_x;
    for (int i = from_step; i < e.grid.n_steps; ++i) {
        auto counts = detail::step_jump_counts(e, model.marks, path, i);
        std::span<const double> x_in(&e.x[path][static_cast<std::size_t>(i) * nx], nx);
        std::span<double> x_out(&e.x[path][static_cast<std::size_t>(i + 1) * nx], nx);
        std::span<const double> dw_step =
            model.dim_w > 0
                ? std::span<const double>(&e.dw[path][static_cast<std::size_t>(i) * model.dim_w], model.dim_w)
                : std::span<const double>();
        detail::euler_step(model, e.grid, i, x_in, dw_step, counts, x_out, scratch);
    }
}

// Draw Brownian increments and jump events for all paths and run the Euler
// scheme.  Path p only consumes streams keyed by p, so enlarging n_paths
// leaves existing paths untouched.
inline PathEnsemble simulate_paths(const LevyModel& model, const TimeGrid& grid, int n_paths,
                                   std::uint64_t seed) {
    model.validate();
    if (n_paths < 1) throw ModelError("need at least one path");
    CounterRng rng(seed);
    PathEnsemble e;
    e.grid = grid;
    e.n_paths = n_paths;
    e.dim_x = model.dim_x;
    e.dim_w = model.dim_w;
    e.seed = seed;
    const int N = grid.n_steps;
    const double dt = grid.dt();
    const double root_dt = std::sqrt(dt);
    const double span_len = grid.horizon - grid.t0;

    e.dw.assign(n_paths, {});
    e.jumps.assign(n_paths, {});
    e.x.assign(n_paths, {});
    for (int p = 0; p < n_paths; ++p) {
        e.dw[p].resize(static_cast<std::size_t>(N) * std::max(model.dim_w, 1), 0.0);
        for (int i = 0; i < N; ++i)
            for (int c = 0; c < model.dim_w; ++c)
                e.dw[p][static_cast<std::size_t>(i) * model.dim_w + c] =
                    rng.normal(p, i, channel::brownian + c) * root_dt;

        e.jumps[p].resize(std::max(1, model.marks.directions()));
        for (int d = 0; d < model.marks.directions(); ++d) {
            const double intensity = model.marks.direction_intensity(d);
            const int count =
                rng.poisson(intensity * span_len, p, d, channel::jump_count);
            auto& events = e.jumps[p][d];
            events.reserve(count);
            for (int k = 0; k < count; ++k) {
                const double u = rng.uniform(p, (static_cast<std::uint64_t>(d) << 32) | k,
                                             channel::jump_time);
                const double time = grid.t0 + u * span_len;
                // Categorical mark draw proportional to the rates.
                double pick = rng.uniform(p, (static_cast<std::uint64_t>(d) << 32) | k,
                                          channel::jump_mark) *
                              intensity;
                int j = 0;
                while (j + 1 < model.marks.marks_in(d) && pick > model.marks.rate(d, j)) {
                    pick -= model.marks.rate(d, j);
                    ++j;
                }
                const int step = std::min(static_cast<int>((time - grid.t0) / dt), N - 1);
                events.push_back({time, step, j});
            }
            std::sort(events.begin(), events.end(),
                      [](const JumpEvent& a, const JumpEvent& b) { return a.time < b.time; });
        }

        e.x[p].assign(static_cast<std::size_t>(N + 1) * model.dim_x, 0.0);
        std::copy(model.x0.begin(), model.x0.end(), e.x[p].begin());
        propagate_path(model, e, p);
    }
    return e;
}

// Copy of the ensemble with one extra deterministic jump of the given mark in
// the step holding s (snapped).  States at nodes <= that step are unchanged;
// later states are re-propagated through the same Euler map.
inline PathEnsemble insert_jump(const PathEnsemble& base, const LevyModel& model, double s, int dir,
                                int mark_index) {
    if (dir < 0 || dir >= model.marks.directions()) throw ModelError("jump direction out of range");
    if (mark_index < 0 || mark_index >= model.marks.marks_in(dir))
        throw ModelError("mark index out of range");
    const int node = base.grid.snap(s);
    const int step = std::min(node, base.grid.n_steps - 1);
    PathEnsemble out = base;
    for (int p = 0; p < out.n_paths; ++p) {
        auto& events = out.jumps[p][dir];
        events.push_back({base.grid.t(step), step, mark_index});
        std::sort(events.begin(), events.end(),
                  [](const JumpEvent& a, const JumpEvent& b) { return a.time < b.time; });
        propagate_path(model, out, p, step);
    }
    return out;
}

// Compensated jump increments d(mu - nu):  count_{step,(dir,j)} - lambda_j dt,
// laid out [step][flat mark index].
inline std::vector<std::vector<double>> compensated_jump_increments(const PathEnsemble& e,
                                                                    const MarkSpec& marks, int path) {
    const double dt = e.grid.dt();
    std::vector<std::vector<double>> out(e.grid.n_steps,
                                         std::vector<double>(std::max(1, marks.total_marks()), 0.0));
    for (int i = 0; i < e.grid.n_steps; ++i)
        for (int idx = 0; idx < marks.total_marks(); ++idx) out[i][idx] = -marks.rate_flat(idx) * dt;
    for (int d = 0; d < marks.directions(); ++d)
        for (const auto& ev : e.jumps[path][d]) out[ev.step][marks.flat(d, ev.mark_index)] += 1.0;
    return out;
}

}  // namespace qexp
