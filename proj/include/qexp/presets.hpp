#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qexp/driver.hpp"
#include "qexp/functions.hpp"
#include "qexp/marks.hpp"

namespace qexp {

// ---------------------------------------------------------------------------
// Terminal conditions
// ---------------------------------------------------------------------------

struct TerminalSpec {
    std::string name = "custom";
    std::function<double(std::span<const double>)> xi;
    // gradient w.r.t. the state; finite differences fill in when absent
    std::function<void(std::span<const double>, std::span<double>)> grad;
    double sup_bound = std::numeric_limits<double>::infinity();  // ||xi||_inf when known
};

inline void terminal_grad(const TerminalSpec& term, std::span<const double> x, std::span<double> out) {
    if (term.grad) {
        term.grad(x, out);
        return;
    }
    std::vector<double> xb(x.begin(), x.end());
    for (std::size_t q = 0; q < x.size(); ++q) {
        const double h = 1e-4 * (1.0 + std::abs(x[q]));
        xb[q] = x[q] + h;
        const double up = term.xi(xb);
        xb[q] = x[q] - h;
        const double dn = term.xi(xb);
        xb[q] = x[q];
        out[q] = (up - dn) / (2.0 * h);
    }
}

inline TerminalSpec make_constant_terminal(double c) {
    TerminalSpec t;
    t.name = "constant";
    t.xi = [c](std::span<const double>) { return c; };
    t.grad = [](std::span<const double> x, std::span<double> g) {
        for (std::size_t q = 0; q < x.size(); ++q) g[q] = 0.0;
    };
    t.sup_bound = std::abs(c);
    return t;
}

// xi(x) = a + b * x[0]
inline TerminalSpec make_affine_terminal(double a, double b) {
    TerminalSpec t;
    t.name = "affine";
    t.xi = [a, b](std::span<const double> x) { return a + b * x[0]; };
    t.grad = [b](std::span<const double> x, std::span<double> g) {
        for (std::size_t q = 0; q < x.size(); ++q) g[q] = 0.0;
        g[0] = b;
    };
    return t;
}

// xi(x) = scale * tanh(x[0] - center): smooth, bounded by |scale|.
inline TerminalSpec make_tanh_terminal(double scale = 1.0, double center = 0.0) {
    TerminalSpec t;
    t.name = "tanh";
    t.xi = [scale, center](std::span<const double> x) { return scale * std::tanh(x[0] - center); };
    t.grad = [scale, center](std::span<const double> x, std::span<double> g) {
        for (std::size_t q = 0; q < x.size(); ++q) g[q] = 0.0;
        const double c = std::cosh(x[0] - center);
        g[0] = scale / (c * c);
    };
    t.sup_bound = std::abs(scale);
    return t;
}

// ---------------------------------------------------------------------------
// Driver presets
// ---------------------------------------------------------------------------

inline DriverSpec make_zero_driver(int dim_z = 1, MarkSpec marks = {}) {
    DriverSpec d;
    d.name = "zero";
    d.dim_z = dim_z;
    d.marks = std::move(marks);
    d.f = [](double, double, std::span<const double>, std::span<const double>) { return 0.0; };
    d.structure = {0.0, 0.0, 1.0};
    d.lipschitz_profile = [](double) { return 0.0; };
    d.quadratic_radial = QuadraticRadial{0.0, true};
    d.df_dy = [](double, double, std::span<const double>, std::span<const double>) { return 0.0; };
    d.df_dz = [](double, double, std::span<const double>, std::span<const double>,
                 std::span<double> out) {
        for (auto& v : out) v = 0.0;
    };
    d.df_dpsi = d.df_dz;
    return d;
}

namespace detail {
// Tight constant for dominating a linear jump term by the exponential
// envelope: sup_s>=0 (c s - j_g(s)) and sup_s>=0 (c s - j_g(-s)), c in [0,1).
inline double linear_jump_envelope_cost(double c, double gamma) {
    if (c == 0.0) return 0.0;
    if (!(c < 1.0)) throw ModelError("jump loadings need modulus < 1 for an exponential envelope");
    const double pos = ((1.0 + c) * std::log1p(c) - c) / gamma;
    const double neg = (c + (1.0 - c) * std::log1p(-c)) / gamma;
    return std::max(pos, neg);
}
}  // namespace detail

// f = alpha y + <bz, z> + sum_d c_d * (sum_j psi_j lambda_j): globally
// Lipschitz, linear in every slot; the workhorse for solver oracles.
inline DriverSpec make_linear_driver(double alpha, std::vector<double> bz, std::vector<double> c,
                                     MarkSpec marks = {}, double envelope_gamma = 1.0) {
    DriverSpec d;
    d.name = "linear";
    d.dim_z = static_cast<int>(bz.size());
    d.marks = std::move(marks);
    if (static_cast<int>(c.size()) < d.marks.directions())
        throw ModelError("linear driver needs one jump loading per direction");

    double l = 0.0;
    double b2 = 0.0;
    for (double v : bz) b2 += v * v;
    l += 0.5 * b2 / envelope_gamma;
    for (int j = 0; j < d.marks.total_marks(); ++j)
        l += d.marks.rate_flat(j) *
             detail::linear_jump_envelope_cost(std::abs(c[d.marks.direction_of(j)]), envelope_gamma);
    d.structure = {l, std::abs(alpha), envelope_gamma};

    double lam_tot = d.marks.total_intensity();
    double c_max = 0.0;
    for (int dd = 0; dd < d.marks.directions(); ++dd) c_max = std::max(c_max, std::abs(c[dd]));
    const double bnorm = std::sqrt(b2);
    d.lipschitz_profile = [K = std::abs(alpha) + bnorm + c_max * lam_tot](double) { return K; };

    auto marks_copy = d.marks;
    d.f = [alpha, bz, c, marks = marks_copy](double, double y, std::span<const double> z,
                                             std::span<const double> psi) {
        double v = alpha * y;
        for (std::size_t i = 0; i < bz.size(); ++i) v += bz[i] * z[i];
        for (int j = 0; j < marks.total_marks(); ++j)
            v += c[marks.direction_of(j)] * psi[j] * marks.rate_flat(j);
        return v;
    };
    d.df_dy = [alpha](double, double, std::span<const double>, std::span<const double>) {
        return alpha;
    };
    d.df_dz = [bz](double, double, std::span<const double>, std::span<const double>,
                   std::span<double> out) {
        for (std::size_t i = 0; i < bz.size(); ++i) out[i] = bz[i];
    };
    d.df_dpsi = [c, marks = marks_copy](double, double, std::span<const double>,
                                        std::span<const double>, std::span<double> out) {
        for (int j = 0; j < marks.total_marks(); ++j)
            out[j] = c[marks.direction_of(j)] * marks.rate_flat(j);
    };

    // Constant-quotient witness, attached when the envelope stays above -1.
    double c1 = 0.0, c2 = 0.0;
    for (int j = 0; j < d.marks.total_marks(); ++j) {
        const double clip = std::min(1.0, std::abs(d.marks.mark_flat(j)));
        const double q = c[d.marks.direction_of(j)] / clip;
        c1 = std::min(c1, q);
        c2 = std::max(c2, q);
    }
    c2 = std::max(c2, 1e-9);
    if (c1 > -1.0 && d.marks.total_marks() > 0) {
        AgammaWitness w;
        w.quotients = [c, marks = marks_copy](double, double, std::span<const double>,
                                              std::span<const double>, std::span<const double>,
                                              std::span<double> out) {
            for (int j = 0; j < marks.total_marks(); ++j) out[j] = c[marks.direction_of(j)];
        };
        w.lower = [c1](double) { return c1; };
        w.upper = [c2](double) { return c2; };
        d.agamma = w;
    }
    return d;
}

// f = l0 + (g/2)|z|^2 + int j_g(psi) nu: saturates the declared envelope from
// below with identically zero upper slack; the canonical quadratic-exponential
// stress case.
inline DriverSpec make_saturating_driver(double gamma, double l0 = 0.0, MarkSpec marks = {}) {
    if (!(gamma > 0.0)) throw ModelError("saturating driver needs gamma > 0");
    if (l0 < 0.0) throw ModelError("saturating driver needs l0 >= 0");
    DriverSpec d;
    d.name = "saturating";
    d.dim_z = 1;
    d.marks = std::move(marks);
    d.structure = {l0, 0.0, gamma};
    d.quadratic_radial = QuadraticRadial{gamma, true};
    d.quadratic_growth = true;
    auto marks_copy = d.marks;
    d.f = [gamma, l0, marks = marks_copy](double, double, std::span<const double> z,
                                          std::span<const double> psi) {
        double z2 = 0.0;
        for (double v : z) z2 += v * v;
        return l0 + 0.5 * gamma * z2 +
               mark_integral(marks, psi, [&](double, double v) { return j_gamma(gamma, v); });
    };
    const double lam_tot = d.marks.total_intensity();
    d.lipschitz_profile = [gamma, lam_tot](double M) {
        return gamma * M + std::expm1(gamma * M) * lam_tot;
    };
    d.df_dy = [](double, double, std::span<const double>, std::span<const double>) { return 0.0; };
    d.df_dz = [gamma](double, double, std::span<const double> z, std::span<const double>,
                      std::span<double> out) {
        for (std::size_t i = 0; i < z.size() && i < out.size(); ++i) out[i] = gamma * z[i];
    };
    d.df_dpsi = [gamma, marks = marks_copy](double, double, std::span<const double>,
                                            std::span<const double> psi, std::span<double> out) {
        for (int j = 0; j < marks.total_marks(); ++j)
            out[j] = j_gamma_deriv(gamma, psi[j]) * marks.rate_flat(j);
    };
    // The convexity quotient certificate needs the unit clip to be trivial;
    // attach it only when every mark has modulus >= 1.
    if (!d.marks.empty() && d.marks.min_unit_clip() >= 1.0) {
        AgammaWitness w;
        w.quotients = [gamma, marks = marks_copy](double, double, std::span<const double>,
                                                  std::span<const double> from,
                                                  std::span<const double> to, std::span<double> out) {
            for (int j = 0; j < marks.total_marks(); ++j)
                out[j] = j_gamma_quotient(gamma, from[j], to[j]);
        };
        w.lower = [gamma](double M) { return std::expm1(-gamma * M); };
        w.upper = [gamma](double M) { return std::expm1(gamma * M); };
        d.agamma = w;
    }
    return d;
}

// Exponential-utility-style driver
//   f = (g/2)|z|^2 + <theta, z> + sum_j (1^|x_j|) j_g(psi_j) lambda_j.
// The unit-clip weight on the jump term makes the monotonicity certificate
// exact with envelope constants expm1(-gM) and expm1(gM).
inline DriverSpec make_exp_utility_driver(double gamma, std::vector<double> theta, MarkSpec marks) {
    if (!(gamma > 0.0)) throw ModelError("utility driver needs gamma > 0");
    DriverSpec d;
    d.name = "exp_utility";
    d.dim_z = static_cast<int>(theta.size());
    if (d.dim_z == 0) {
        d.dim_z = 1;
        theta.assign(1, 0.0);
    }
    d.marks = std::move(marks);
    double th2 = 0.0;
    for (double v : theta) th2 += v * v;
    if (th2 == 0.0) {
        d.structure = {0.0, 0.0, gamma};
        d.quadratic_radial = QuadraticRadial{gamma, true};
    } else {
        // theta.z <= (g/2)|z|^2 + |theta|^2/(2g) shifts the envelope to 2g.
        d.structure = {0.5 * th2 / gamma, 0.0, 2.0 * gamma};
    }
    d.quadratic_growth = true;

    auto marks_copy = d.marks;
    auto clip = [](double x) { return std::min(1.0, std::abs(x)); };
    d.f = [gamma, theta, marks = marks_copy, clip](double, double, std::span<const double> z,
                                                   std::span<const double> psi) {
        double v = 0.0;
        for (std::size_t i = 0; i < theta.size(); ++i) v += 0.5 * gamma * z[i] * z[i] + theta[i] * z[i];
        return v + mark_integral(marks, psi,
                                 [&](double x, double p) { return clip(x) * j_gamma(gamma, p); });
    };
    const double lam_tot = d.marks.total_intensity();
    d.lipschitz_profile = [gamma, lam_tot, th = std::sqrt(th2)](double M) {
        return gamma * M + th + std::expm1(gamma * M) * lam_tot;
    };
    d.df_dy = [](double, double, std::span<const double>, std::span<const double>) { return 0.0; };
    d.df_dz = [gamma, theta](double, double, std::span<const double> z, std::span<const double>,
                             std::span<double> out) {
        for (std::size_t i = 0; i < theta.size(); ++i) out[i] = gamma * z[i] + theta[i];
    };
    d.df_dpsi = [gamma, marks = marks_copy, clip](double, double, std::span<const double>,
                                                  std::span<const double> psi, std::span<double> out) {
        for (int j = 0; j < marks.total_marks(); ++j)
            out[j] = clip(marks.mark_flat(j)) * j_gamma_deriv(gamma, psi[j]) * marks.rate_flat(j);
    };
    AgammaWitness w;
    w.quotients = [gamma, marks = marks_copy, clip](double, double, std::span<const double>,
                                                    std::span<const double> from,
                                                    std::span<const double> to, std::span<double> out) {
        for (int j = 0; j < marks.total_marks(); ++j)
            out[j] = clip(marks.mark_flat(j)) * j_gamma_quotient(gamma, from[j], to[j]);
    };
    w.lower = [gamma](double M) { return std::expm1(-gamma * M); };
    w.upper = [gamma](double M) { return std::expm1(gamma * M); };
    d.agamma = w;
    return d;
}

}  // namespace qexp
