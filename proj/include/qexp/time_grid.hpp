#pragma once

#include <algorithm>
#include <cmath>

#include "qexp/errors.hpp"

namespace qexp {

// Uniform time grid t0 = t_0 < ... < t_N = horizon.
struct TimeGrid {
    double t0 = 0.0;
    double horizon = 1.0;
    int n_steps = 1;

    TimeGrid() = default;
    TimeGrid(double start, double end, int steps) : t0(start), horizon(end), n_steps(steps) {
        if (!(end > start)) throw ModelError("time grid needs horizon > t0");
        if (steps < 1) throw ModelError("time grid needs at least one step");
    }

    double dt() const { return (horizon - t0) / n_steps; }
    double t(int i) const { return t0 + i * dt(); }

    // Nearest grid node to a time inside [t0, horizon].
    int snap(double s) const {
        if (s < t0 - 1e-12 || s > horizon + 1e-12) throw ModelError("time outside grid span");
        int i = static_cast<int>(std::lround((s - t0) / dt()));
        return std::clamp(i, 0, n_steps);
    }
};

}  // namespace qexp
