#pragma once

#include <cmath>
#include <limits>

#include "qexp/errors.hpp"

namespace qexp {

struct PicardOptions {
    double tol = 1e-12;  // residual threshold, scaled by 1 + |y|
    int max_iters = 100;
    int divergence_window = 5;  // iterations without a new best residual
};

struct PicardOutcome {
    double y = 0.0;
    int iters = 0;
    double residual = 0.0;
    bool converged = false;
};

// Fixed point of y = map(y).  Divergence is declared when the residual fails
// to beat its running best for a full window, which catches both growth and
// the unit-contraction-factor stall.
template <class Map>
PicardOutcome picard_fixed_point(Map&& map, double y_start, const PicardOptions& opt, int step) {
    double y = y_start;
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    PicardOutcome out;
    for (int it = 1; it <= opt.max_iters; ++it) {
        const double y_next = map(y);
        const double res = std::abs(y_next - y);
        y = y_next;
        if (!std::isfinite(y))
            throw SolverError("Picard iteration produced a non-finite value", step);
        out.y = y;
        out.iters = it;
        out.residual = res;
        if (res <= opt.tol * (1.0 + std::abs(y))) {
            out.converged = true;
            return out;
        }
        if (res < best) {
            best = res;
            since_best = 0;
        } else if (++since_best >= opt.divergence_window) {
            throw SolverError("Picard iteration is not contracting", step);
        }
    }
    return out;  // hit max_iters; caller decides how loudly to complain
}

}  // namespace qexp
