#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qexp/driver.hpp"
#include "qexp/errors.hpp"
#include "qexp/functions.hpp"

namespace qexp {

// One rung of the mollification ladder: n and m are the target z-Lipschitz
// levels of the positive/negative convolutions, k_trunc the radius index of
// the smooth truncation applied to the y and psi arguments (never to z).
struct RegularizationIndex {
    int n = 1;
    int m = 1;
    int k_trunc = 1;

    void validate() const {
        if (n < 1 || m < 1 || k_trunc < 1)
            throw ConfigError("regularization indices n, m, k_trunc must all be >= 1");
    }
};

enum class ConvolveMode {
    automatic,    // closed form when the driver declares it, numeric otherwise
    closed_form,  // require the quadratic-radial closed form
    numeric,      // force the search even when a closed form exists
};

struct ConvolveOptions {
    ConvolveMode mode = ConvolveMode::automatic;
    double tol = 1e-10;  // golden-section interval width at termination
    int sweeps = 3;      // coordinate-descent passes when dim_z > 1
};

namespace detail {

template <class F>
double golden_min_arg(F&& g, double lo, double hi, double tol) {
    constexpr double invphi = 0.6180339887498949;
    double a = lo, b = hi;
    double x1 = b - invphi * (b - a);
    double x2 = a + invphi * (b - a);
    double g1 = g(x1), g2 = g(x2);
    while (b - a > tol) {
        if (g1 <= g2) {
            b = x2;
            x2 = x1;
            g2 = g1;
            x1 = b - invphi * (b - a);
            g1 = g(x1);
        } else {
            a = x1;
            x1 = x2;
            g1 = g2;
            x2 = a + invphi * (b - a);
            g2 = g(x2);
        }
    }
    return 0.5 * (a + b);
}

// Minimize h(w) + slope*|z - w| over w in R^d for h >= 0.  The w = z
// candidate localizes the minimizer: any w with slope*|z-w| > h(z) already
// loses to it, so the search box |w_c - z_c| <= 1.05*h(z)/slope suffices.
// The candidate is also folded into the returned value, which makes the
// bound (result <= h(z)) and the Lipschitz fixed point exact, not
// approximate.  In several dimensions the distance kink at w = z pins pure
// coordinate descent (each axis slice can be minimal at z while a diagonal
// move descends), so when the h-gradient at z exceeds the slope a line
// search along -grad h escapes the kink before the sweeps run.  A minimizer
// pinned to the box edge means h broke the nonnegativity contract somewhere;
// the box is enlarged once, then reported.
template <class H>
double lipschitz_inf(H&& h, std::span<const double> z, double slope, const ConvolveOptions& opt) {
    const int d = static_cast<int>(z.size());
    std::vector<double> w(z.begin(), z.end());
    const double at_z = h(std::span<const double>(w));
    if (!std::isfinite(at_z)) throw NumericsError("driver evaluation is not finite");
    if (d == 0 || at_z <= 0.0) return at_z;

    auto objective = [&]() {
        double dist2 = 0.0;
        for (int e = 0; e < d; ++e) {
            const double dd = w[e] - z[e];
            dist2 += dd * dd;
        }
        return h(std::span<const double>(w)) + slope * std::sqrt(dist2);
    };

    double radius = 1.05 * at_z / slope;
    double best = at_z;
    const int n_sweeps = (d == 1) ? 1 : opt.sweeps;
    for (int attempt = 0;; ++attempt) {
        bool on_edge = false;
        auto descend = [&]() {
            for (int sweep = 0; sweep < n_sweeps; ++sweep) {
                for (int c = 0; c < d; ++c) {
                    auto slice = [&](double v) {
                        w[c] = v;
                        return objective();
                    };
                    w[c] = golden_min_arg(slice, z[c] - radius, z[c] + radius,
                                          opt.tol * (1.0 + radius));
                }
            }
            best = std::min(best, objective());
            for (int c = 0; c < d; ++c)
                if (std::abs(w[c] - z[c]) > 0.999 * radius) on_edge = true;
        };

        w.assign(z.begin(), z.end());
        descend();

        if (d >= 2) {
            std::vector<double> grad(d);
            double gn = 0.0;
            for (int c = 0; c < d; ++c) {
                const double hs = 1e-6 * (1.0 + std::abs(z[c]));
                w.assign(z.begin(), z.end());
                w[c] = z[c] + hs;
                const double up = h(std::span<const double>(w));
                w[c] = z[c] - hs;
                const double dn = h(std::span<const double>(w));
                grad[c] = (up - dn) / (2.0 * hs);
                gn += grad[c] * grad[c];
            }
            gn = std::sqrt(gn);
            if (gn > slope) {
                auto ray = [&](double s) {
                    for (int c = 0; c < d; ++c) w[c] = z[c] - s * grad[c] / gn;
                    return objective();
                };
                const double s = golden_min_arg(ray, 0.0, radius, opt.tol * (1.0 + radius));
                for (int c = 0; c < d; ++c) w[c] = z[c] - s * grad[c] / gn;
                descend();
            }
        }

        if (!on_edge) break;
        if (attempt == 1)
            throw NumericsError("Lipschitz mollification: minimizer stayed on the enlarged search "
                                "boundary (objective decreases without bound?)");
        radius *= 4.0;
    }
    return best;
}

// inf_w { a + (q/2)|w|^2 + slope*|z-w| } for a, q >= 0: the minimizer sits at
// |w| = min(|z|, slope/q) on the ray towards z.
inline double quadratic_inf_closed(double a, double q, double znorm, double slope) {
    if (q * znorm <= slope) return a + 0.5 * q * znorm * znorm;
    return a + slope * znorm - 0.5 * slope * slope / q;
}

inline bool closed_form_ready(const DriverSpec& d) {
    return d.quadratic_radial && d.quadratic_radial->nonneg_base && d.quadratic_radial->coeff >= 0.0;
}

inline bool use_closed_form(const DriverSpec& d, const ConvolveOptions& opt) {
    if (opt.mode == ConvolveMode::numeric) return false;
    const bool ready = closed_form_ready(d);
    if (opt.mode == ConvolveMode::closed_form && !ready)
        throw ConfigError("closed-form mollification needs a driver declared quadratic-radial "
                          "with a nonnegative base");
    return ready;
}

}  // namespace detail

// Positive-part Lipschitz mollification in the z slot:
//   inf_w { max(f,0)(t,y,w,psi) + n|z-w| }.
// n-Lipschitz in z, nonnegative, monotone nondecreasing in n, <= max(f,0).
inline double inf_convolve(const DriverSpec& driver, int n, double t, double y,
                           std::span<const double> z, std::span<const double> psi,
                           const ConvolveOptions& opt = {}) {
    if (n < 1) throw ConfigError("inf-convolution level must be >= 1");
    if (detail::use_closed_form(driver, opt)) {
        const std::vector<double> z0(z.size(), 0.0);
        const double a = std::max(driver.f(t, y, z0, psi), 0.0);
        double zn = 0.0;
        for (double v : z) zn += v * v;
        return detail::quadratic_inf_closed(a, driver.quadratic_radial->coeff, std::sqrt(zn), n);
    }
    auto h = [&](std::span<const double> w) { return std::max(driver.f(t, y, w, psi), 0.0); };
    return detail::lipschitz_inf(h, z, static_cast<double>(n), opt);
}

// Negative-part counterpart:
//   sup_w { min(f,0)(t,y,w,psi) - m|z-w| }  =  -inf_w { max(-f,0)(w) + m|z-w| }.
// m-Lipschitz in z, nonpositive, monotone nonincreasing in m, >= min(f,0).
inline double sup_convolve(const DriverSpec& driver, int m, double t, double y,
                           std::span<const double> z, std::span<const double> psi,
                           const ConvolveOptions& opt = {}) {
    if (m < 1) throw ConfigError("sup-convolution level must be >= 1");
    if (detail::use_closed_form(driver, opt)) return 0.0;  // f >= 0 has no negative part
    auto h = [&](std::span<const double> w) { return std::max(-driver.f(t, y, w, psi), 0.0); };
    return -detail::lipschitz_inf(h, z, static_cast<double>(m), opt);
}

// The globally Lipschitz stage of the approximation ladder:
//   f_reg(t,y,z,psi) = inf-part^n + sup-part^m evaluated at (t, phi_k(y), z, phi_k(psi)).
// Declared structure parameters are inherited unchanged (truncation shrinks
// |y| and |psi_j| while preserving sign, and each convolution is squeezed
// between 0 and the corresponding signed part).  The result is Lipschitz in z
// with constant max(n, m) and inherits the base modulus in (y, psi) on the
// truncation range.
inline DriverSpec regularize(const DriverSpec& base, const RegularizationIndex& idx,
                             const ConvolveOptions& opt = {}) {
    idx.validate();
    base.validate();
    auto held = std::make_shared<const DriverSpec>(base);
    const double k = static_cast<double>(idx.k_trunc);

    DriverSpec d;
    char tag[64];
    std::snprintf(tag, sizeof tag, "+reg(n=%d,m=%d,k=%d)", idx.n, idx.m, idx.k_trunc);
    d.name = base.name + tag;
    d.dim_z = base.dim_z;
    d.marks = base.marks;
    d.structure = base.structure;
    d.regularized = true;
    d.quadratic_growth = false;

    d.f = [held, idx, opt, k](double t, double y, std::span<const double> z,
                              std::span<const double> psi) {
        const double yk = truncate_phi(y, k);
        std::vector<double> pk(psi.size());
        for (std::size_t j = 0; j < psi.size(); ++j) pk[j] = truncate_phi(psi[j], k);
        return inf_convolve(*held, idx.n, t, yk, z, pk, opt) +
               sup_convolve(*held, idx.m, t, yk, z, pk, opt);
    };

    const double zlip = static_cast<double>(std::max(idx.n, idx.m));
    if (base.lipschitz_profile) {
        d.lipschitz_profile = [zlip, prof = base.lipschitz_profile, k](double M) {
            return std::max(zlip, prof(std::min(M, k + 2.0)));
        };
    } else {
        d.lipschitz_profile = [zlip](double) { return zlip; };
    }

    // Jump-monotonicity certificate: with a nonnegative base the negative
    // part vanishes and the psi-dependence passes through the z-infimum
    // additively, so the base quotients at the truncated pair, scaled by the
    // (in [0,1]) truncation quotients, witness the regularized driver too.
    if (base.agamma && detail::closed_form_ready(base)) {
        AgammaWitness w;
        w.quotients = [bw = *base.agamma, k](double t, double y, std::span<const double> z,
                                             std::span<const double> from,
                                             std::span<const double> to, std::span<double> out) {
            const std::size_t J = from.size();
            std::vector<double> fk(J), tk(J);
            for (std::size_t j = 0; j < J; ++j) {
                fk[j] = truncate_phi(from[j], k);
                tk[j] = truncate_phi(to[j], k);
            }
            bw.quotients(t, truncate_phi(y, k), z, fk, tk, out);
            for (std::size_t j = 0; j < J; ++j) out[j] *= truncate_phi_quotient(from[j], to[j], k);
        };
        w.lower = [lo = base.agamma->lower, k](double M) {
            return std::min(0.0, lo(std::min(M, k + 1.0)));
        };
        w.upper = [hi = base.agamma->upper, k](double M) {
            return std::max(0.0, hi(std::min(M, k + 1.0)));
        };
        d.agamma = std::move(w);
    }
    return d;
}

}  // namespace qexp
