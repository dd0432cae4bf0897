#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "qexp/driver.hpp"
#include "qexp/errors.hpp"
#include "qexp/presets.hpp"
#include "qexp/regularize.hpp"
#include "qexp/solution.hpp"

namespace qexp {

// Largest pointwise |Y| difference across all time slices; both solutions
// must live on the same structure.
inline double sup_y_gap(const BsdeSolution& a, const BsdeSolution& b) {
    if (a.structure != b.structure)
        throw ConfigError("y-gap needs two solutions on the same structure");
    double gap = 0.0;
    for (std::size_t i = 0; i < a.y.size(); ++i)
        for (std::size_t node = 0; node < a.y[i].size(); ++node)
            gap = std::max(gap, std::abs(a.y[i][node] - b.y[i][node]));
    return gap;
}

// One ordering verdict between two schedule entries that differ in exactly
// one regularization coordinate: raising n may only raise Y, raising m may
// only lower it.  max_violation is the worst nodewise breach (0 when the
// order holds everywhere).
struct CascadeOrderCheck {
    int from = 0, to = 0;  // schedule positions; `to` carries the larger coordinate
    char coordinate = 'n';
    double max_violation = 0.0;

    bool holds(double tol) const { return max_violation <= tol; }
};

struct CascadeResult {
    std::vector<RegularizationIndex> schedule;
    std::vector<BsdeSolution> solutions;
    std::vector<double> gap_to_previous;  // sup-norm y gap between consecutive entries
    std::vector<CascadeOrderCheck> order_checks;

    double max_order_violation() const {
        double v = 0.0;
        for (const auto& c : order_checks) v = std::max(v, c.max_violation);
        return v;
    }
};

namespace detail {

// Worst breach of "expect low <= high nodewise".
inline double order_violation(const BsdeSolution& low, const BsdeSolution& high) {
    double v = 0.0;
    for (std::size_t i = 0; i < low.y.size(); ++i)
        for (std::size_t node = 0; node < low.y[i].size(); ++node)
            v = std::max(v, low.y[i][node] - high.y[i][node]);
    return v;
}

}  // namespace detail

// Solve the regularized family f^{n,m,k} over a schedule of indices on one
// shared structure.  The base driver must carry a passing structure envelope
// and, when it reads the jump slice, a passing monotonicity witness; those
// certificates are what make the ordering verdicts meaningful.
inline CascadeResult solve_qexp_cascade(std::shared_ptr<const StepStructure> st,
                                        const DriverSpec& base, const TerminalSpec& terminal,
                                        const std::vector<RegularizationIndex>& schedule,
                                        const ConvolveOptions& copt = {},
                                        const PicardOptions& popt = {}) {
    if (schedule.empty()) throw ConfigError("cascade schedule is empty");
    for (const auto& idx : schedule) idx.validate();
    detail::check_driver_compat(base, st->marks(), st->dim_w());

    if (!check_structure(base).passed())
        throw ConfigError("driver '" + base.name +
                          "' violates its declared structure envelope; cascade refused");
    if (base.marks.total_marks() > 0) {
        if (!base.agamma)
            throw ConfigError("driver '" + base.name +
                              "' reads the jump slice but carries no monotonicity witness; "
                              "the cascade ordering would be uncertified");
        if (!check_agamma(base).passed())
            throw ConfigError("driver '" + base.name +
                              "' fails its jump-monotonicity certificate; cascade refused");
    }

    const auto xi = terminal_slice(*st, terminal);

    CascadeResult res;
    res.schedule = schedule;
    res.solutions.reserve(schedule.size());
    for (std::size_t e = 0; e < schedule.size(); ++e) {
        const auto& idx = schedule[e];
        const std::string tag = "cascade entry (n=" + std::to_string(idx.n) +
                                ", m=" + std::to_string(idx.m) +
                                ", k=" + std::to_string(idx.k_trunc) + ")";
        try {
            const DriverSpec reg = regularize(base, idx, copt);
            res.solutions.push_back(solve_backward(st, xi, make_backward_spec(reg), popt));
        } catch (const ConfigError& err) {
            throw ConfigError(tag + ": " + err.what());
        } catch (const ModelError& err) {
            throw ModelError(tag + ": " + err.what());
        } catch (const CapacityError& err) {
            throw CapacityError(tag + ": " + err.what());
        } catch (const NumericsError& err) {
            throw NumericsError(tag + ": " + err.what());
        } catch (const Error& err) {
            throw Error(tag + ": " + err.what());
        }
        res.gap_to_previous.push_back(
            e == 0 ? 0.0 : sup_y_gap(res.solutions[e - 1], res.solutions[e]));
    }

    // Ordering verdicts for every pair comparable in a single coordinate:
    // `from` holds the smaller coordinate.  Raising n may only raise Y,
    // raising m may only lower it.
    const int count = static_cast<int>(schedule.size());
    for (int i = 0; i < count; ++i)
        for (int j = 0; j < count; ++j) {
            if (i == j) continue;
            const auto& a = schedule[i];
            const auto& b = schedule[j];
            if (a.k_trunc != b.k_trunc) continue;
            if (a.m == b.m && a.n < b.n)
                res.order_checks.push_back(
                    {i, j, 'n', detail::order_violation(res.solutions[i], res.solutions[j])});
            else if (a.n == b.n && a.m < b.m)
                res.order_checks.push_back(
                    {i, j, 'm', detail::order_violation(res.solutions[j], res.solutions[i])});
        }
    return res;
}

}  // namespace qexp
