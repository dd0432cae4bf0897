#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qexp/errors.hpp"
#include "qexp/marks.hpp"

namespace qexp {

// Forward dynamics driven by a Brownian motion and compensated finite-activity
// jumps:
//   dX = b(t,X) dt + sigma(t,X) dW + sum_marks gamma(t,X-,x) d(mu - nu).
//
// Coefficients write into caller-provided spans to keep simulation loops
// allocation-free.  `additive` declares state-independent coefficients, which
// licenses the recombining lattice.
struct LevyModel {
    int dim_x = 1;
    int dim_w = 1;
    std::vector<double> x0;
    MarkSpec marks;

    // b(t, x) -> out[dim_x]
    std::function<void(double, std::span<const double>, std::span<double>)> drift;
    // sigma(t, x) -> out[dim_x * dim_w], column c = loading of Brownian c
    std::function<void(double, std::span<const double>, std::span<double>)> vol;
    // gamma(t, x, direction, mark value) -> out[dim_x]
    std::function<void(double, std::span<const double>, int, double, std::span<double>)> jump_coeff;

    // Optional analytic state-derivatives applied to a direction v; directional
    // finite differences are used when absent.
    std::function<void(double, std::span<const double>, std::span<const double>, std::span<double>)>
        drift_dx;  // (t, x, v) -> (d_x b) v
    std::function<void(double, std::span<const double>, std::span<const double>, std::span<double>)>
        vol_dx;  // (t, x, v) -> flattened (d_x sigma) v, dim_x * dim_w
    std::function<void(double, std::span<const double>, int, double, std::span<const double>,
                       std::span<double>)>
        jump_dx;  // (t, x, dir, mark, v) -> (d_x gamma) v

    bool additive = false;
    std::string name = "custom";

    void validate() const {
        if (dim_x < 1 || dim_w < 0) throw ModelError("model dimensions must be positive");
        if (static_cast<int>(x0.size()) != dim_x) throw ModelError("x0 size must match dim_x");
        if (!drift || !vol) throw ModelError("model needs drift and vol coefficients");
        if (!marks.empty() && !jump_coeff) throw ModelError("model with marks needs jump_coeff");
    }
};

// Constant-coefficient arithmetic model: X = x0 + b t + sigma W + additive
// jumps of size scale_d * x per direction d.
inline LevyModel make_additive_model(std::vector<double> x0, std::vector<double> b_const,
                                     std::vector<double> sigma_flat, int dim_w, MarkSpec marks = {},
                                     std::vector<double> jump_scales = {}) {
    LevyModel m;
    m.dim_x = static_cast<int>(x0.size());
    m.dim_w = dim_w;
    m.x0 = std::move(x0);
    m.marks = std::move(marks);
    if (jump_scales.empty()) jump_scales.assign(std::max(1, m.marks.directions()), 1.0);
    if (!m.marks.empty() && static_cast<int>(jump_scales.size()) != m.marks.directions())
        throw ModelError("one jump scale per direction");
    if (static_cast<int>(b_const.size()) != m.dim_x) throw ModelError("drift size must match dim_x");
    if (static_cast<int>(sigma_flat.size()) != m.dim_x * m.dim_w)
        throw ModelError("vol size must be dim_x * dim_w");
    m.drift = [b = std::move(b_const)](double, std::span<const double>, std::span<double> out) {
        std::copy(b.begin(), b.end(), out.begin());
    };
    m.vol = [s = std::move(sigma_flat)](double, std::span<const double>, std::span<double> out) {
        std::copy(s.begin(), s.end(), out.begin());
    };
    m.jump_coeff = [scales = std::move(jump_scales), dim_x = m.dim_x](
                       double, std::span<const double>, int dir, double mark, std::span<double> out) {
        for (int q = 0; q < dim_x; ++q) out[q] = 0.0;
        out[0] = scales[dir] * mark;  // jumps act on the first coordinate
    };
    m.additive = true;
    m.name = "additive";
    return m;
}

// Scalar linear-drift diffusion dX = a X dt + sigma dW (vol constant), handy
// because its state-derivative flow is exp(a (t-s)) in closed form.
inline LevyModel make_linear_drift_model(double x0, double a, double sigma) {
    LevyModel m;
    m.dim_x = 1;
    m.dim_w = 1;
    m.x0 = {x0};
    m.drift = [a](double, std::span<const double> x, std::span<double> out) { out[0] = a * x[0]; };
    m.vol = [sigma](double, std::span<const double>, std::span<double> out) { out[0] = sigma; };
    m.drift_dx = [a](double, std::span<const double>, std::span<const double> v, std::span<double> out) {
        out[0] = a * v[0];
    };
    m.vol_dx = [](double, std::span<const double>, std::span<const double>, std::span<double> out) {
        out[0] = 0.0;
    };
    m.additive = false;
    m.name = "linear_drift";
    return m;
}

// Geometric dynamics dX = mu X dt + sigma X dW + X e d(mu-nu); coefficients
// are state-dependent, so the lattice grows this one as a tree.
inline LevyModel make_geometric_model(double x0, double mu, double sigma, MarkSpec marks = {}) {
    LevyModel m;
    m.dim_x = 1;
    m.dim_w = 1;
    m.x0 = {x0};
    m.marks = std::move(marks);
    m.drift = [mu](double, std::span<const double> x, std::span<double> out) { out[0] = mu * x[0]; };
    m.vol = [sigma](double, std::span<const double> x, std::span<double> out) { out[0] = sigma * x[0]; };
    m.jump_coeff = [](double, std::span<const double> x, int, double mark, std::span<double> out) {
        out[0] = x[0] * mark;
    };
    m.drift_dx = [mu](double, std::span<const double>, std::span<const double> v, std::span<double> out) {
        out[0] = mu * v[0];
    };
    m.vol_dx = [sigma](double, std::span<const double>, std::span<const double> v, std::span<double> out) {
        out[0] = sigma * v[0];
    };
    m.jump_dx = [](double, std::span<const double>, int, double mark, std::span<const double> v,
                   std::span<double> out) { out[0] = v[0] * mark; };
    m.additive = false;
    m.name = "geometric";
    return m;
}

}  // namespace qexp
