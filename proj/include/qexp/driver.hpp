#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qexp/errors.hpp"
#include "qexp/functions.hpp"
#include "qexp/marks.hpp"
#include "qexp/rng.hpp"

namespace qexp {

// Declared growth envelope of a driver:
//   -l - beta|y| - (g/2)|z|^2 - int j_g(-psi) nu   <=   f(t,y,z,psi)
//    f(t,y,z,psi)  <=  l + beta|y| + (g/2)|z|^2 + int j_g(psi) nu.
struct StructureParams {
    double l = 0.0;
    double beta = 0.0;
    double gamma = 1.0;  // > 0
};

// Declares f(t,y,z,psi) = base(t,y,psi) + (coeff/2)|z|^2 with base >= 0 when
// nonneg_base holds; licenses the closed-form Lipschitz mollification in z.
struct QuadraticRadial {
    double coeff = 1.0;
    bool nonneg_base = true;
};

// Jump-monotonicity certificate: for psi, psi' within radius M,
//   f(..,psi) - f(..,psi') <= sum_j quotients_j (psi_j - psi'_j) lambda_j,
// with lower(M) * (1^|x_j|) <= quotients_j <= upper(M) * (1^|x_j|) and
// lower(M) > -1.
struct AgammaWitness {
    std::function<void(double t, double y, std::span<const double> z,
                       std::span<const double> psi_from, std::span<const double> psi_to,
                       std::span<double> out)>
        quotients;
    std::function<double(double M)> lower;
    std::function<double(double M)> upper;
};

struct DriverSpec {
    std::string name = "custom";
    int dim_z = 1;
    MarkSpec marks;

    std::function<double(double t, double y, std::span<const double> z, std::span<const double> psi)> f;
    StructureParams structure;
    std::function<double(double M)> lipschitz_profile;  // K_M on the radius-M ball
    std::optional<QuadraticRadial> quadratic_radial;
    std::optional<AgammaWitness> agamma;

    // Optional analytic partials; finite differences fill in when absent.
    std::function<double(double, double, std::span<const double>, std::span<const double>)> df_dy;
    std::function<void(double, double, std::span<const double>, std::span<const double>,
                       std::span<double>)>
        df_dz;
    std::function<void(double, double, std::span<const double>, std::span<const double>,
                       std::span<double>)>
        df_dpsi;

    bool quadratic_growth = false;  // superlinear z-growth: direct solves carry a caveat
    bool regularized = false;       // produced by the mollification cascade

    double eval(double t, double y, std::span<const double> z, std::span<const double> psi) const {
        return f(t, y, z, psi);
    }

    void validate() const {
        if (!f) throw ModelError("driver needs an evaluation function");
        if (dim_z < 0) throw ModelError("driver dim_z must be nonnegative");
        if (!(structure.gamma > 0.0)) throw ModelError("structure gamma must be positive");
        if (structure.l < 0.0 || structure.beta < 0.0)
            throw ModelError("structure l and beta must be nonnegative");
    }
};

// --- finite-difference partials (fallbacks used by the derivative equations) ---

inline double driver_dy(const DriverSpec& d, double t, double y, std::span<const double> z,
                        std::span<const double> psi) {
    if (d.df_dy) return d.df_dy(t, y, z, psi);
    const double h = 1e-4 * (1.0 + std::abs(y));
    return (d.f(t, y + h, z, psi) - d.f(t, y - h, z, psi)) / (2.0 * h);
}

inline void driver_dz(const DriverSpec& d, double t, double y, std::span<const double> z,
                      std::span<const double> psi, std::span<double> out) {
    if (d.df_dz) {
        d.df_dz(t, y, z, psi, out);
        return;
    }
    std::vector<double> zb(z.begin(), z.end());
    for (int c = 0; c < d.dim_z; ++c) {
        const double h = 1e-4 * (1.0 + std::abs(z[c]));
        zb[c] = z[c] + h;
        const double up = d.f(t, y, zb, psi);
        zb[c] = z[c] - h;
        const double dn = d.f(t, y, zb, psi);
        zb[c] = z[c];
        out[c] = (up - dn) / (2.0 * h);
    }
}

inline void driver_dpsi(const DriverSpec& d, double t, double y, std::span<const double> z,
                        std::span<const double> psi, std::span<double> out) {
    if (d.df_dpsi) {
        d.df_dpsi(t, y, z, psi, out);
        return;
    }
    std::vector<double> pb(psi.begin(), psi.end());
    for (int j = 0; j < d.marks.total_marks(); ++j) {
        const double h = 1e-4 * (1.0 + std::abs(psi[j]));
        pb[j] = psi[j] + h;
        const double up = d.f(t, y, z, pb);
        pb[j] = psi[j] - h;
        const double dn = d.f(t, y, z, pb);
        pb[j] = psi[j];
        out[j] = (up - dn) / (2.0 * h);
    }
}

// --- structure / certificate checks -----------------------------------------

struct SampleSpec {
    int n_points = 512;
    double t0 = 0.0, t1 = 1.0;
    double radius_y = 2.0, radius_z = 3.0, radius_psi = 1.5;
    std::uint64_t seed = 1234;
    double tol_abs = 1e-12;  // absolute slack tolerance
    double tol_rel = 1e-9;   // scaled by the magnitude of the compared terms
};

struct StructureViolation {
    double t, y;
    std::vector<double> z, psi;
    double slack_upper, slack_lower;
};

struct StructureReport {
    int n_points = 0;
    int violations = 0;
    double worst_upper = 0.0;  // most negative upper slack seen
    double worst_lower = 0.0;
    std::vector<StructureViolation> samples;  // a few offending points
    bool passed() const { return violations == 0; }
};

namespace detail {
inline void sample_point(const CounterRng& rng, const SampleSpec& s, const DriverSpec& d,
                         std::uint64_t i, double& t, double& y, std::vector<double>& z,
                         std::vector<double>& psi) {
    t = s.t0 + (s.t1 - s.t0) * rng.uniform(i, 0, channel::sampling);
    y = s.radius_y * (2.0 * rng.uniform(i, 1, channel::sampling) - 1.0);
    z.resize(d.dim_z);
    for (int c = 0; c < d.dim_z; ++c)
        z[c] = s.radius_z * (2.0 * rng.uniform(i, 2 + c, channel::sampling) - 1.0);
    psi.resize(d.marks.total_marks());
    for (int j = 0; j < d.marks.total_marks(); ++j)
        psi[j] = s.radius_psi * (2.0 * rng.uniform(i, 100 + j, channel::sampling) - 1.0);
}
}  // namespace detail

// Sampling certificate for the declared growth envelope.  Records per-point
// slack on both inequalities; a point violates if either slack is below
// -max(tol_abs, tol_rel * magnitude).
inline StructureReport check_structure(const DriverSpec& driver, const SampleSpec& spec = {}) {
    driver.validate();
    CounterRng rng(spec.seed);
    StructureReport rep;
    rep.n_points = spec.n_points;
    std::vector<double> z, psi, neg_psi;
    const auto& sp = driver.structure;
    for (int i = 0; i < spec.n_points; ++i) {
        double t, y;
        detail::sample_point(rng, spec, driver, i, t, y, z, psi);
        neg_psi.assign(psi.size(), 0.0);
        for (std::size_t j = 0; j < psi.size(); ++j) neg_psi[j] = -psi[j];

        double z2 = 0.0;
        for (double v : z) z2 += v * v;
        const double env_core = sp.l + sp.beta * std::abs(y) + 0.5 * sp.gamma * z2;
        const double jump_up = mark_integral(driver.marks, psi, [&](double, double v) {
            return j_gamma(sp.gamma, v);
        });
        const double jump_dn = mark_integral(driver.marks, neg_psi, [&](double, double v) {
            return j_gamma(sp.gamma, v);
        });
        const double fv = driver.f(t, y, z, psi);
        const double up = env_core + jump_up - fv;
        const double dn = fv + env_core + jump_dn;
        const double magnitude = std::abs(fv) + env_core + jump_up + jump_dn;
        const double tol = std::max(spec.tol_abs, spec.tol_rel * magnitude);

        rep.worst_upper = std::min(rep.worst_upper, up);
        rep.worst_lower = std::min(rep.worst_lower, dn);
        if (up < -tol || dn < -tol) {
            ++rep.violations;
            if (rep.samples.size() < 8) rep.samples.push_back({t, y, z, psi, up, dn});
        }
    }
    return rep;
}

struct AgammaReport {
    bool witness_present = false;
    int n_points = 0;
    int inequality_violations = 0;  // f(psi)-f(psi') <= sum Gamma dpsi lambda
    int envelope_violations = 0;    // lower(M)(1^|x|) <= Gamma <= upper(M)(1^|x|)
    double lower_constant = 0.0;    // lower(M); must exceed -1
    double worst_inequality = 0.0;
    bool passed() const {
        return witness_present && inequality_violations == 0 && envelope_violations == 0 &&
               lower_constant > -1.0;
    }
};

// Sampling certificate for the jump-monotonicity witness.
inline AgammaReport check_agamma(const DriverSpec& driver, const SampleSpec& spec = {}) {
    AgammaReport rep;
    rep.n_points = spec.n_points;
    if (!driver.agamma) return rep;
    rep.witness_present = true;
    rep.lower_constant = driver.agamma->lower(spec.radius_psi);

    CounterRng rng(spec.seed ^ 0xa5a5a5a5ull);
    const int J = driver.marks.total_marks();
    std::vector<double> z, psi, psi2(J), gam(J);
    for (int i = 0; i < spec.n_points; ++i) {
        double t, y;
        detail::sample_point(rng, spec, driver, i, t, y, z, psi);
        for (int j = 0; j < J; ++j)
            psi2[j] = spec.radius_psi * (2.0 * rng.uniform(i, 300 + j, channel::sampling) - 1.0);

        driver.agamma->quotients(t, y, z, psi2, psi, gam);
        double rhs = 0.0;
        for (int j = 0; j < J; ++j) rhs += gam[j] * (psi[j] - psi2[j]) * driver.marks.rate_flat(j);
        const double lhs = driver.f(t, y, z, psi) - driver.f(t, y, z, psi2);
        const double tol = std::max(spec.tol_abs, spec.tol_rel * (std::abs(lhs) + std::abs(rhs)));
        rep.worst_inequality = std::min(rep.worst_inequality, rhs - lhs);
        if (lhs > rhs + tol) ++rep.inequality_violations;

        const double lo = driver.agamma->lower(spec.radius_psi);
        const double hi = driver.agamma->upper(spec.radius_psi);
        for (int j = 0; j < J; ++j) {
            const double clip = std::min(1.0, std::abs(driver.marks.mark_flat(j)));
            if (gam[j] < lo * clip - 1e-12 || gam[j] > hi * clip + 1e-12) ++rep.envelope_violations;
        }
    }
    return rep;
}

// --- jump aggregation ---------------------------------------------------------

// u^d(t) = sum_j rho(x_j) G(t, psi_j) lambda_j per direction d: the scalar
// channel through which drivers may read the jump slice.
struct JumpAggregatorSpec {
    std::function<double(double x)> rho;
    std::function<double(double t, double v)> G;    // G(t, 0) = 0
    std::function<double(double t, double v)> dG;   // d/dv
    std::function<double(double R)> dG_sup;         // sup_{|v|<=R} |dG|
};

inline std::vector<double> aggregate_jumps(const JumpAggregatorSpec& agg, const MarkSpec& marks,
                                           double t, std::span<const double> psi) {
    if (!agg.rho || !agg.G) throw ModelError("aggregator needs rho and G");
    std::vector<double> u(std::max(1, marks.directions()), 0.0);
    for (int d = 0; d < marks.directions(); ++d)
        for (int j = 0; j < marks.marks_in(d); ++j)
            u[d] += agg.rho(marks.mark(d, j)) * agg.G(t, psi[marks.flat(d, j)]) * marks.rate(d, j);
    u.resize(std::max(1, marks.directions()));
    return u;
}

// ||rho||_{L2(nu)} = sqrt(sum_j rho(x_j)^2 lambda_j).
inline double aggregator_rho_norm(const JumpAggregatorSpec& agg, const MarkSpec& marks) {
    double s = 0.0;
    for (int i = 0; i < marks.total_marks(); ++i) {
        const double r = agg.rho(marks.mark_flat(i));
        s += r * r * marks.rate_flat(i);
    }
    return std::sqrt(s);
}

inline JumpAggregatorSpec make_identity_aggregator() {
    JumpAggregatorSpec a;
    a.rho = [](double) { return 1.0; };
    a.G = [](double, double v) { return v; };
    a.dG = [](double, double) { return 1.0; };
    a.dG_sup = [](double) { return 1.0; };
    return a;
}

}  // namespace qexp
