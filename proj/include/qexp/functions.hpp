#pragma once

#include <cmath>

#include "qexp/errors.hpp"

namespace qexp {

// j_gamma(u) = (exp(gamma*u) - 1 - gamma*u) / gamma.
//
// The exponential compensator profile: nonnegative, convex, j(0)=0, and the
// natural jump analogue of the quadratic z-term (gamma/2)|z|^2, to which it
// degenerates as gamma -> 0.  A series branch keeps full relative accuracy
// near u = 0 where the direct expression cancels catastrophically.
inline double j_gamma(double gamma, double u) {
    if (gamma == 0.0) return 0.5 * u * u;
    const double t = gamma * u;
    if (std::abs(t) < 0.5) {
        // j = u * t * sum_{k>=0} t^k / (k+2)!
        double term = 0.5;
        double sum = 0.5;
        for (int k = 1; k < 30; ++k) {
            term *= t / (k + 2);
            sum += term;
            if (std::abs(term) < 1e-18 * std::abs(sum)) break;
        }
        return u * t * sum;
    }
    return (std::expm1(t) - t) / gamma;
}

// d/du j_gamma(u) = exp(gamma*u) - 1.
inline double j_gamma_deriv(double gamma, double u) {
    if (gamma == 0.0) return u;
    return std::expm1(gamma * u);
}

// Difference quotient (j(b) - j(a)) / (b - a), defaulting to the derivative
// on the diagonal.  By convexity it lies in [j'(min(a,b)), j'(max(a,b))],
// so for |a|,|b| <= M it is bounded below by exp(-gamma*M) - 1 > -1.
inline double j_gamma_quotient(double gamma, double a, double b) {
    if (a == b) return j_gamma_deriv(gamma, a);
    return (j_gamma(gamma, b) - j_gamma(gamma, a)) / (b - a);
}

namespace detail {
// Quintic blend H on [0,1]: H(0)=0, H'(0)=1, H''(0)=0, H(1)=1/2, H'(1)=0,
// H''(1)=0, with H' decreasing from 1 to 0 (so 0 <= H' <= 1).
inline double trunc_blend(double s) { return s - s * s * s + 0.5 * s * s * s * s; }
inline double trunc_blend_deriv(double s) { return 1.0 - 3.0 * s * s + 2.0 * s * s * s; }
}  // namespace detail

// Smooth level-m truncation: identity on [-m, m], constant +-(m+1) outside
// [-(m+2), m+2], odd, nondecreasing, C^2, with |derivative| <= 1 everywhere.
inline double truncate_phi(double x, double m) {
    if (m < 0.0) throw ModelError("truncation level must be nonnegative");
    const double ax = std::abs(x);
    if (ax <= m) return x;
    const double s = std::copysign(1.0, x);
    if (ax >= m + 2.0) return s * (m + 1.0);
    return s * (m + 2.0 * detail::trunc_blend(0.5 * (ax - m)));
}

inline double truncate_phi_deriv(double x, double m) {
    if (m < 0.0) throw ModelError("truncation level must be nonnegative");
    const double ax = std::abs(x);
    if (ax <= m) return 1.0;
    if (ax >= m + 2.0) return 0.0;
    return detail::trunc_blend_deriv(0.5 * (ax - m));
}

// (phi_m(b) - phi_m(a)) / (b - a), the derivative on the diagonal; lies in
// [0, 1] because phi_m is nondecreasing and 1-Lipschitz.
inline double truncate_phi_quotient(double a, double b, double m) {
    if (a == b) return truncate_phi_deriv(a, m);
    return (truncate_phi(b, m) - truncate_phi(a, m)) / (b - a);
}

}  // namespace qexp
