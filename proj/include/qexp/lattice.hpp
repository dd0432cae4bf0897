#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qexp/ensemble.hpp"
#include "qexp/errors.hpp"
#include "qexp/model.hpp"
#include "qexp/presets.hpp"
#include "qexp/solution.hpp"

namespace qexp {

struct LatticeOptions {
    long long node_budget = 1'000'000;
    bool force_tree = false;  // skip recombination even for additive models
};

// Finite-state product chain: per step, each node branches over all signs of
// +-sqrt(dt) Brownian moves (2^dim_w combos) times the jump outcome {none,
// one jump of flat mark j}, with P(mark j) = lambda_j dt.  Conditional
// expectations are exact child sums, which makes this the solver oracle.
// Additive models recombine on increment-count keys; anything else grows a
// tree under a hard node budget.
class LatticeStructure final : public StepStructure {
  public:
    LatticeStructure(const LevyModel& model, const TimeGrid& grid, LatticeOptions opt = {})
        : grid_(grid), marks_(model.marks), dim_x_(model.dim_x), dim_w_(model.dim_w) {
        if (dim_w_ > 16) throw ModelError("lattice branching needs dim_w <= 16");
        build(model, opt);
    }

    const TimeGrid& grid() const override { return grid_; }
    const MarkSpec& marks() const override { return marks_; }
    int dim_x() const override { return dim_x_; }
    int dim_w() const override { return dim_w_; }
    int n_nodes(int step) const override { return static_cast<int>(weights_[step].size()); }
    std::span<const double> state(int step, int node) const override {
        return {&states_[step][static_cast<std::size_t>(node) * dim_x_],
                static_cast<std::size_t>(dim_x_)};
    }
    double node_weight(int step, int node) const override { return weights_[step][node]; }

    void condexp(int step, std::span<const double> next, std::span<double> out) const override {
        const int nodes = n_nodes(step);
        for (int node = 0; node < nodes; ++node) {
            double acc = 0.0;
            const int* ch = &child_[step][static_cast<std::size_t>(node) * n_branch_];
            for (int b = 0; b < n_branch_; ++b)
                acc += branch_prob_[b] * next[static_cast<std::size_t>(ch[b])];
            out[node] = acc;
        }
    }

    void project(int step, std::span<const double> next, std::span<double> ey,
                 std::span<double> ez, std::span<double> epsi) const override {
        const int nodes = n_nodes(step);
        const int J = marks_.total_marks();
        const double dt = grid_.dt();
        for (int node = 0; node < nodes; ++node) {
            double acc = 0.0;
            double* ez_node = dim_w_ > 0 ? &ez[static_cast<std::size_t>(node) * dim_w_] : nullptr;
            double* ep_node = J > 0 ? &epsi[static_cast<std::size_t>(node) * J] : nullptr;
            const int* ch = &child_[step][static_cast<std::size_t>(node) * n_branch_];
            for (int b = 0; b < n_branch_; ++b) {
                const double pv = branch_prob_[b] * next[static_cast<std::size_t>(ch[b])];
                acc += pv;
                const int combo = b / (J + 1);
                const int jc = b % (J + 1);
                for (int c = 0; c < dim_w_; ++c)
                    ez_node[c] += pv * combo_dw_[static_cast<std::size_t>(combo) * dim_w_ + c];
                for (int j = 0; j < J; ++j)
                    ep_node[j] += pv * ((jc == 1 + j ? 1.0 : 0.0) - marks_.rate_flat(j) * dt);
            }
            ey[node] = acc;
        }
    }

    long long total_nodes() const { return total_nodes_; }

  private:
    void build(const LevyModel& model, const LatticeOptions& opt) {
        model.validate();
        const int N = grid_.n_steps;
        const double dt = grid_.dt();
        const double root_dt = std::sqrt(dt);
        const int J = marks_.total_marks();

        const double lam_dt = marks_.total_intensity() * dt;
        if (lam_dt >= 1.0)
            throw ModelError("time step too coarse for the jump intensities: sum(lambda) dt = " +
                             std::to_string(lam_dt) + " must stay below 1");

        n_combos_ = 1 << dim_w_;
        n_branch_ = n_combos_ * (J + 1);
        combo_dw_.assign(static_cast<std::size_t>(n_combos_) * std::max(dim_w_, 1), 0.0);
        for (int combo = 0; combo < n_combos_; ++combo)
            for (int c = 0; c < dim_w_; ++c)
                combo_dw_[static_cast<std::size_t>(combo) * dim_w_ + c] =
                    ((combo >> c) & 1) ? root_dt : -root_dt;
        branch_prob_.assign(n_branch_, 0.0);
        const double combo_prob = 1.0 / n_combos_;
        for (int combo = 0; combo < n_combos_; ++combo)
            for (int jc = 0; jc <= J; ++jc)
                branch_prob_[combo * (J + 1) + jc] =
                    combo_prob * (jc == 0 ? 1.0 - lam_dt : marks_.rate_flat(jc - 1) * dt);

        states_.resize(N + 1);
        weights_.resize(N + 1);
        child_.resize(N);
        states_[0] = model.x0;
        weights_[0] = {1.0};
        total_nodes_ = 1;

        const bool recombine = model.additive && !opt.force_tree;
        const int key_len = dim_w_ + J;
        std::vector<std::vector<int>> keys_here{std::vector<int>(key_len, 0)};

        std::vector<double> scratch, xnew(dim_x_);
        std::vector<int> counts(std::max(1, J), 0);
        for (int i = 0; i < N; ++i) {
            const int nodes = n_nodes(i);
            child_[i].assign(static_cast<std::size_t>(nodes) * n_branch_, -1);
            std::map<std::vector<int>, int> by_key;
            std::vector<std::vector<int>> keys_next;
            auto& st_next = states_[i + 1];
            auto& wt_next = weights_[i + 1];

            for (int node = 0; node < nodes; ++node) {
                const std::span<const double> x_in = state(i, node);
                for (int combo = 0; combo < n_combos_; ++combo) {
                    const std::span<const double> dwv =
                        dim_w_ > 0 ? std::span<const double>(
                                         &combo_dw_[static_cast<std::size_t>(combo) * dim_w_],
                                         static_cast<std::size_t>(dim_w_))
                                   : std::span<const double>();
                    for (int jc = 0; jc <= J; ++jc) {
                        std::fill(counts.begin(), counts.end(), 0);
                        if (jc > 0) counts[jc - 1] = 1;
                        detail::euler_step(model, grid_, i, x_in, dwv, counts, xnew, scratch);

                        int child = -1;
                        if (recombine) {
                            std::vector<int> key = keys_here[node];
                            for (int c = 0; c < dim_w_; ++c) key[c] += (combo >> c) & 1;
                            if (jc > 0) key[dim_w_ + jc - 1] += 1;
                            auto [it, inserted] = by_key.try_emplace(std::move(key), -1);
                            if (inserted) {
                                child = static_cast<int>(wt_next.size());
                                it->second = child;
                                st_next.insert(st_next.end(), xnew.begin(), xnew.end());
                                wt_next.push_back(0.0);
                                keys_next.push_back(it->first);
                            } else {
                                child = it->second;
                                for (int q = 0; q < dim_x_; ++q) {
                                    const double ref =
                                        st_next[static_cast<std::size_t>(child) * dim_x_ + q];
                                    if (std::abs(ref - xnew[q]) >
                                        1e-9 * (1.0 + std::abs(ref)))
                                        throw ModelError(
                                            "model declared additive but its transitions do "
                                            "not recombine");
                                }
                            }
                        } else {
                            child = static_cast<int>(wt_next.size());
                            st_next.insert(st_next.end(), xnew.begin(), xnew.end());
                            wt_next.push_back(0.0);
                        }
                        child_[i][static_cast<std::size_t>(node) * n_branch_ +
                                  combo * (J + 1) + jc] = child;
                        wt_next[child] +=
                            weights_[i][node] * branch_prob_[combo * (J + 1) + jc];
                    }
                }
            }
            total_nodes_ += static_cast<long long>(wt_next.size());
            if (total_nodes_ > opt.node_budget)
                throw CapacityError("lattice exceeds the node budget (" +
                                    std::to_string(total_nodes_) + " nodes by step " +
                                    std::to_string(i + 1) + ", budget " +
                                    std::to_string(opt.node_budget) +
                                    "); shrink the horizon, coarsen dt, or use the "
                                    "regression backend");
            keys_here = std::move(keys_next);
        }
    }

    TimeGrid grid_;
    MarkSpec marks_;
    int dim_x_ = 1;
    int dim_w_ = 1;
    int n_combos_ = 2;
    int n_branch_ = 2;
    long long total_nodes_ = 0;
    std::vector<double> combo_dw_;    // [combo*dim_w + c]
    std::vector<double> branch_prob_;  // [combo*(J+1) + jump case]
    std::vector<std::vector<double>> states_;
    std::vector<std::vector<double>> weights_;
    std::vector<std::vector<int>> child_;
};

inline std::shared_ptr<const LatticeStructure> build_lattice(const LevyModel& model,
                                                             const TimeGrid& grid,
                                                             LatticeOptions opt = {}) {
    return std::make_shared<const LatticeStructure>(model, grid, opt);
}

inline BsdeSolution solve_lattice(std::shared_ptr<const LatticeStructure> lat,
                                  const DriverSpec& driver, const TerminalSpec& terminal,
                                  const PicardOptions& opt = {}) {
    detail::check_driver_compat(driver, lat->marks(), lat->dim_w());
    return solve_backward(lat, terminal_slice(*lat, terminal), make_backward_spec(driver), opt);
}

inline BsdeSolution solve_lattice(const LevyModel& model, const TimeGrid& grid,
                                  const DriverSpec& driver, const TerminalSpec& terminal,
                                  const PicardOptions& popt = {}, LatticeOptions lopt = {}) {
    return solve_lattice(build_lattice(model, grid, lopt), driver, terminal, popt);
}

}  // namespace qexp
