#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qexp/ensemble.hpp"
#include "qexp/errors.hpp"
#include "qexp/marks.hpp"
#include "qexp/model.hpp"
#include "qexp/presets.hpp"
#include "qexp/solution.hpp"
#include "qexp/time_grid.hpp"

namespace qexp {

// Monomials of total degree <= degree in the standardized state coordinates.
// A coordinate that is numerically constant across the ensemble at some step
// carries no information there and is dropped from that step's basis, so the
// initial step always collapses to a plain mean.
struct RegressionBasis {
    int degree = 2;
};

namespace detail {

inline void monomial_powers(int n_coords, int budget, std::vector<int>& cur,
                            std::vector<std::vector<int>>& out) {
    if (static_cast<int>(cur.size()) == n_coords) {
        out.push_back(cur);
        return;
    }
    for (int d = 0; d <= budget; ++d) {
        cur.push_back(d);
        monomial_powers(n_coords, budget - d, cur, out);
        cur.pop_back();
    }
}

}  // namespace detail

// Simulation backend: every path is a node on every step, and conditional
// expectations are least-squares projections onto the per-step basis.  The
// normal matrix is diagonalized once per step and the factorization is shared
// by the value, Brownian and jump projections.
class EnsembleStructure final : public StepStructure {
  public:
    EnsembleStructure(PathEnsemble paths, MarkSpec marks, RegressionBasis basis = {})
        : paths_(std::move(paths)), marks_(std::move(marks)), degree_(basis.degree) {
        if (degree_ < 0) throw ConfigError("regression basis degree must be non-negative");
        if (paths_.n_paths < 1) throw ModelError("regression needs at least one path");
        if (marks_.directions() > 0 &&
            static_cast<int>(paths_.jumps.at(0).size()) < marks_.directions())
            throw ModelError("mark specification does not match the simulated jump streams");
        count_jumps();
        steps_.reserve(paths_.grid.n_steps);
        for (int i = 0; i < paths_.grid.n_steps; ++i) steps_.push_back(build_step(i));
    }

    const TimeGrid& grid() const override { return paths_.grid; }
    const MarkSpec& marks() const override { return marks_; }
    int dim_x() const override { return paths_.dim_x; }
    int dim_w() const override { return paths_.dim_w; }
    int n_nodes(int) const override { return paths_.n_paths; }
    std::span<const double> state(int step, int node) const override {
        return paths_.state(node, step);
    }
    double node_weight(int, int) const override { return 1.0 / paths_.n_paths; }

    void condexp(int step, std::span<const double> next, std::span<double> out) const override {
        fit(
            step, 1, [&](int p, std::span<double> tg) { tg[0] = next[p]; },
            [&](int p, std::span<const double> vals) { out[p] = vals[0]; });
    }

    void project(int step, std::span<const double> next, std::span<double> ey,
                 std::span<double> ez, std::span<double> epsi) const override {
        const int dw = paths_.dim_w;
        const int J = marks_.total_marks();
        const double dt = paths_.grid.dt();
        fit(
            step, 1 + dw + J,
            [&](int p, std::span<double> tg) {
                const double v = next[p];
                tg[0] = v;
                for (int c = 0; c < dw; ++c) tg[1 + c] = v * paths_.dw_at(p, step, c);
                for (int j = 0; j < J; ++j)
                    tg[1 + dw + j] =
                        v * (counts_[step][static_cast<std::size_t>(p) * J + j] -
                             marks_.rate_flat(j) * dt);
            },
            [&](int p, std::span<const double> vals) {
                ey[p] = vals[0];
                for (int c = 0; c < dw; ++c) ez[static_cast<std::size_t>(p) * dw + c] = vals[1 + c];
                for (int j = 0; j < J; ++j)
                    epsi[static_cast<std::size_t>(p) * J + j] = vals[1 + dw + j];
            });
        // A mark that never fired in some step leaves its projection with no
        // signal, only compensator noise; report it as zero instead.
        for (int j = 0; j < J; ++j)
            if (cell_total_[step][j] == 0)
                for (int p = 0; p < paths_.n_paths; ++p)
                    epsi[static_cast<std::size_t>(p) * J + j] = 0.0;
    }

    int basis_size(int step) const { return static_cast<int>(steps_[step].powers.size()); }
    int empty_jump_cells() const { return empty_cells_; }
    int total_jump_cells() const { return paths_.grid.n_steps * marks_.total_marks(); }
    const PathEnsemble& paths() const { return paths_; }

  private:
    struct StepBasis {
        std::vector<int> active;               // coordinates with spread at this step
        std::vector<double> mean, inv_sd;      // per state coordinate
        std::vector<std::vector<int>> powers;  // per basis function, over active coordinates
        Eigen::MatrixXd eigvecs;               // normal-matrix eigendecomposition
        Eigen::VectorXd eigvals;
    };

    void count_jumps() {
        const int J = marks_.total_marks();
        const int N = paths_.grid.n_steps;
        counts_.assign(N, {});
        cell_total_.assign(N, std::vector<int>(std::max(J, 1), 0));
        if (J == 0) return;
        for (int i = 0; i < N; ++i)
            counts_[i].assign(static_cast<std::size_t>(paths_.n_paths) * J, 0);
        for (int p = 0; p < paths_.n_paths; ++p)
            for (int d = 0; d < marks_.directions(); ++d)
                for (const auto& ev : paths_.jumps[p][d]) {
                    const int j = marks_.flat(d, ev.mark_index);
                    ++counts_[ev.step][static_cast<std::size_t>(p) * J + j];
                    ++cell_total_[ev.step][j];
                }
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < J; ++j)
                if (cell_total_[i][j] == 0) ++empty_cells_;
    }

    StepBasis build_step(int step) const {
        const int nx = paths_.dim_x;
        const int n = paths_.n_paths;
        StepBasis sb;
        sb.mean.assign(nx, 0.0);
        sb.inv_sd.assign(nx, 0.0);
        for (int p = 0; p < n; ++p) {
            auto x = paths_.state(p, step);
            for (int q = 0; q < nx; ++q) sb.mean[q] += x[q];
        }
        for (int q = 0; q < nx; ++q) sb.mean[q] /= n;
        std::vector<double> var(nx, 0.0);
        for (int p = 0; p < n; ++p) {
            auto x = paths_.state(p, step);
            for (int q = 0; q < nx; ++q) var[q] += (x[q] - sb.mean[q]) * (x[q] - sb.mean[q]);
        }
        for (int q = 0; q < nx; ++q) {
            const double sd = std::sqrt(var[q] / n);
            if (sd > 1e-12 * (1.0 + std::abs(sb.mean[q]))) {
                sb.active.push_back(q);
                sb.inv_sd[q] = 1.0 / sd;
            }
        }

        std::vector<int> cur;
        detail::monomial_powers(static_cast<int>(sb.active.size()), degree_, cur, sb.powers);
        const int m = static_cast<int>(sb.powers.size());
        if (m * 10 > n)
            throw ConfigError("regression basis has " + std::to_string(m) + " functions for " +
                              std::to_string(n) +
                              " paths; need at least 10 paths per basis function (raise n_paths "
                              "or lower the degree)");

        Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(m, m);
        std::vector<double> u(sb.active.size()), row(m);
        for (int p = 0; p < n; ++p) {
            basis_row(sb, paths_.state(p, step), u, row);
            for (int a = 0; a < m; ++a)
                for (int b = a; b < m; ++b) gram(a, b) += row[a] * row[b];
        }
        gram /= static_cast<double>(n);
        for (int a = 0; a < m; ++a)
            for (int b = 0; b < a; ++b) gram(a, b) = gram(b, a);

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
        if (es.info() != Eigen::Success)
            throw NumericsError("normal-matrix factorization failed at time step " +
                                std::to_string(step));
        sb.eigvals = es.eigenvalues();
        sb.eigvecs = es.eigenvectors();
        if (sb.eigvals(0) <= 1e-12 * std::max(sb.eigvals(m - 1), 1.0))
            throw NumericsError("regression basis is numerically rank-deficient at time step " +
                                std::to_string(step) +
                                "; distinct basis functions coincide on the ensemble");
        return sb;
    }

    void basis_row(const StepBasis& sb, std::span<const double> x, std::vector<double>& u,
                   std::span<double> row) const {
        for (std::size_t a = 0; a < sb.active.size(); ++a) {
            const int q = sb.active[a];
            u[a] = (x[q] - sb.mean[q]) * sb.inv_sd[q];
        }
        for (std::size_t k = 0; k < sb.powers.size(); ++k) {
            double v = 1.0;
            for (std::size_t a = 0; a < sb.powers[k].size(); ++a)
                for (int rep = 0; rep < sb.powers[k][a]; ++rep) v *= u[a];
            row[k] = v;
        }
    }

    // Fit n_targets regressands in one pass: accumulate all right-hand sides,
    // reuse the step's factorization, then evaluate the fits on every path.
    template <class TargetFn, class EmitFn>
    void fit(int step, int n_targets, TargetFn&& target, EmitFn&& emit) const {
        const StepBasis& sb = steps_[step];
        const int m = static_cast<int>(sb.powers.size());
        const int n = paths_.n_paths;
        Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m, n_targets);
        std::vector<double> u(sb.active.size()), row(m), tg(n_targets), vals(n_targets);
        for (int p = 0; p < n; ++p) {
            basis_row(sb, paths_.state(p, step), u, row);
            target(p, std::span<double>(tg.data(), tg.size()));
            for (int k = 0; k < m; ++k)
                for (int c = 0; c < n_targets; ++c) rhs(k, c) += row[k] * tg[c];
        }
        rhs /= static_cast<double>(n);
        Eigen::MatrixXd coef(m, n_targets);
        for (int c = 0; c < n_targets; ++c)
            coef.col(c) =
                sb.eigvecs * ((sb.eigvecs.transpose() * rhs.col(c)).cwiseQuotient(sb.eigvals));
        for (int p = 0; p < n; ++p) {
            basis_row(sb, paths_.state(p, step), u, row);
            for (int c = 0; c < n_targets; ++c) {
                double v = 0.0;
                for (int k = 0; k < m; ++k) v += row[k] * coef(k, c);
                vals[c] = v;
            }
            emit(p, std::span<const double>(vals.data(), vals.size()));
        }
    }

    PathEnsemble paths_;
    MarkSpec marks_;
    int degree_;
    int empty_cells_ = 0;
    std::vector<StepBasis> steps_;           // per conditioning step 0..N-1
    std::vector<std::vector<int>> counts_;   // [step][path*J + j]
    std::vector<std::vector<int>> cell_total_;
};

inline std::shared_ptr<const EnsembleStructure> build_regression_structure(
    const LevyModel& model, PathEnsemble paths, RegressionBasis basis = {}) {
    if (paths.dim_x != model.dim_x || paths.dim_w != model.dim_w)
        throw ModelError("ensemble dimensions do not match the model");
    return std::make_shared<const EnsembleStructure>(std::move(paths), model.marks, basis);
}

inline BsdeSolution solve_regression(std::shared_ptr<const EnsembleStructure> st,
                                     const DriverSpec& driver, const TerminalSpec& terminal,
                                     const PicardOptions& opt = {}) {
    detail::check_driver_compat(driver, st->marks(), st->dim_w());
    BackwardSpec spec = make_backward_spec(driver);
    if (st->empty_jump_cells() > 0)
        spec.warnings.push_back(std::to_string(st->empty_jump_cells()) + " of " +
                                std::to_string(st->total_jump_cells()) +
                                " (time step, mark) cells saw no simulated jumps; their psi "
                                "estimates are zero");
    return solve_backward(st, terminal_slice(*st, terminal), spec, opt);
}

inline BsdeSolution solve_regression(const LevyModel& model, const TimeGrid& grid, int n_paths,
                                     std::uint64_t seed, const DriverSpec& driver,
                                     const TerminalSpec& terminal, RegressionBasis basis = {},
                                     const PicardOptions& opt = {}) {
    return solve_regression(
        build_regression_structure(model, simulate_paths(model, grid, n_paths, seed), basis),
        driver, terminal, opt);
}

}  // namespace qexp
