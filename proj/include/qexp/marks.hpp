#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "qexp/errors.hpp"

namespace qexp {

// Finite-activity jump structure: a small set of Poisson directions, each
// carrying finitely many deterministic mark sizes with individual rates.
// All mark-measure integrals are finite sums  sum_j g(x_j) * lambda_j.
class MarkSpec {
  public:
    MarkSpec() = default;

    MarkSpec(std::vector<std::vector<double>> marks, std::vector<std::vector<double>> rates)
        : marks_(std::move(marks)), rates_(std::move(rates)) {
        if (marks_.size() != rates_.size())
            throw ModelError("mark sizes and rates need one list per direction");
        offsets_.clear();
        offsets_.reserve(marks_.size() + 1);
        offsets_.push_back(0);
        for (std::size_t d = 0; d < marks_.size(); ++d) {
            if (marks_[d].size() != rates_[d].size())
                throw ModelError("mark sizes and rates must align within a direction");
            for (std::size_t j = 0; j < marks_[d].size(); ++j) {
                if (marks_[d][j] == 0.0) throw ModelError("mark sizes must be nonzero");
                if (!(rates_[d][j] > 0.0)) throw ModelError("mark rates must be positive");
            }
            offsets_.push_back(offsets_.back() + static_cast<int>(marks_[d].size()));
        }
        if (offsets_.empty()) offsets_.push_back(0);
    }

    int directions() const { return static_cast<int>(marks_.size()); }
    int marks_in(int dir) const { return static_cast<int>(marks_[dir].size()); }
    int total_marks() const { return offsets_.empty() ? 0 : offsets_.back(); }
    bool empty() const { return total_marks() == 0; }

    // Flat index of (direction, mark); psi vectors use this layout.
    int flat(int dir, int j) const { return offsets_[dir] + j; }
    int direction_of(int flat_index) const {
        int d = 0;
        while (offsets_[d + 1] <= flat_index) ++d;
        return d;
    }

    double mark(int dir, int j) const { return marks_[dir][j]; }
    double rate(int dir, int j) const { return rates_[dir][j]; }
    double mark_flat(int idx) const {
        int d = direction_of(idx);
        return marks_[d][idx - offsets_[d]];
    }
    double rate_flat(int idx) const {
        int d = direction_of(idx);
        return rates_[d][idx - offsets_[d]];
    }

    double direction_intensity(int dir) const {
        return std::accumulate(rates_[dir].begin(), rates_[dir].end(), 0.0);
    }
    double total_intensity() const {
        double s = 0.0;
        for (int d = 0; d < directions(); ++d) s += direction_intensity(d);
        return s;
    }

    // Smallest 1 ^ |x_j| over all marks (1 when there are no marks).
    double min_unit_clip() const {
        double v = 1.0;
        for (int i = 0; i < total_marks(); ++i) v = std::min(v, std::min(1.0, std::abs(mark_flat(i))));
        return v;
    }

  private:
    std::vector<std::vector<double>> marks_;
    std::vector<std::vector<double>> rates_;
    std::vector<int> offsets_{0};
};

// sum_j g(x_j, psi_j) * lambda_j over all (direction, mark) pairs.
template <class F>
double mark_integral(const MarkSpec& marks, std::span<const double> psi, F&& g) {
    double s = 0.0;
    for (int i = 0; i < marks.total_marks(); ++i) s += g(marks.mark_flat(i), psi[i]) * marks.rate_flat(i);
    return s;
}

// L2(mark measure) norm: sqrt(sum_j v_j^2 lambda_j).
inline double mark_l2_norm(const MarkSpec& marks, std::span<const double> v) {
    double s = 0.0;
    for (int i = 0; i < marks.total_marks(); ++i) s += v[i] * v[i] * marks.rate_flat(i);
    return std::sqrt(s);
}

}  // namespace qexp
