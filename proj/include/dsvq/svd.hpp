#pragma once

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "dsvq/matrix.hpp"

namespace dsvq {

// Full decomposition of an a x b matrix: u is a x a orthogonal, s holds the
// min(a, b) singular values in descending order, and v is stored already
// transposed (b x b), so the product u * diag_rect(s) * v restores the input.
struct SvdFactors {
    Matrix u;
    std::vector<double> s;
    Matrix v;
};

inline Matrix diag_rect(const std::vector<double>& s, std::size_t rows, std::size_t cols) {
    if (s.size() != std::min(rows, cols)) {
        throw ShapeError("diag_rect needs " + std::to_string(std::min(rows, cols)) +
                         " values for a " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " matrix, got " + std::to_string(s.size()));
    }
    Matrix d(rows, cols);
    for (std::size_t i = 0; i < s.size(); ++i) d.at(i, i) = s[i];
    return d;
}

inline Matrix reconstruct(const SvdFactors& f) {
    return matmul(matmul(f.u, diag_rect(f.s, f.u.rows, f.v.rows)), f.v);
}

namespace detail {

inline double col_dot(const Matrix& m, std::size_t p, std::size_t q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) acc += m.at(i, p) * m.at(i, q);
    return acc;
}

inline void rotate_cols(Matrix& m, std::size_t p, std::size_t q, double c, double s) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double xp = m.at(i, p);
        const double xq = m.at(i, q);
        m.at(i, p) = c * xp - s * xq;
        m.at(i, q) = s * xp + c * xq;
    }
}

// One-sided Jacobi for a tall or square input (rows >= cols). Rotations are
// applied to column pairs of a working copy until all pairs are orthogonal in
// a relative sense; column norms are then the singular values.
inline SvdFactors jacobi_svd(const Matrix& m) {
    const std::size_t a = m.rows;
    const std::size_t b = m.cols;
    constexpr double kTol = 1e-12;

    Matrix g = m;
    Matrix vcols = Matrix::identity(b);

    const std::size_t max_sweeps = 100 * b;
    std::size_t sweep = 0;
    bool converged = false;
    for (; sweep < max_sweeps; ++sweep) {
        double max_off = 0.0;
        for (std::size_t p = 0; p + 1 < b; ++p) {
            for (std::size_t q = p + 1; q < b; ++q) {
                const double app = col_dot(g, p, p);
                const double aqq = col_dot(g, q, q);
                if (app == 0.0 || aqq == 0.0) continue;
                const double apq = col_dot(g, p, q);
                const double rel = std::fabs(apq) / std::sqrt(app * aqq);
                max_off = std::max(max_off, rel);
                if (rel <= kTol) continue;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                rotate_cols(g, p, q, c, t * c);
                rotate_cols(vcols, p, q, c, t * c);
            }
        }
        if (max_off <= kTol) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        throw NumericalError("singular value iteration did not converge after " +
                                 std::to_string(max_sweeps) + " sweeps",
                             max_sweeps);
    }

    std::vector<double> sigma(b);
    for (std::size_t j = 0; j < b; ++j) sigma[j] = std::sqrt(col_dot(g, j, j));

    std::vector<std::size_t> order(b);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    SvdFactors f;
    f.s.resize(b);
    f.v = Matrix(b, b);
    f.u = Matrix(a, a);
    Matrix gs(a, b);
    for (std::size_t j = 0; j < b; ++j) {
        const std::size_t src = order[j];
        f.s[j] = sigma[src];
        for (std::size_t i = 0; i < a; ++i) gs.at(i, j) = g.at(i, src);
        // v is stored pre-transposed: row j is the j-th right singular vector.
        for (std::size_t i = 0; i < b; ++i) f.v.at(j, i) = vcols.at(i, src);
    }

    // Columns with a usable singular value come straight from the rotated
    // working copy; rank-deficient and trailing columns are completed to an
    // orthonormal basis from identity candidates.
    const double rank_tol = f.s.empty() ? 0.0
                                        : f.s[0] * DBL_EPSILON * static_cast<double>(std::max(a, b));
    std::vector<std::size_t> set_cols;
    std::vector<std::size_t> fill_cols;
    for (std::size_t j = 0; j < b; ++j) {
        if (f.s[j] > rank_tol) {
            for (std::size_t i = 0; i < a; ++i) f.u.at(i, j) = gs.at(i, j) / f.s[j];
            set_cols.push_back(j);
        } else {
            f.s[j] = 0.0;
            fill_cols.push_back(j);
        }
    }
    for (std::size_t j = b; j < a; ++j) fill_cols.push_back(j);

    auto orthonormalize = [&](std::vector<double>& cand) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t c : set_cols) {
                double proj = 0.0;
                for (std::size_t i = 0; i < a; ++i) proj += cand[i] * f.u.at(i, c);
                for (std::size_t i = 0; i < a; ++i) cand[i] -= proj * f.u.at(i, c);
            }
        }
        double nrm = 0.0;
        for (double x : cand) nrm += x * x;
        return std::sqrt(nrm);
    };

    std::size_t cursor = 0;
    for (std::size_t slot = 0; slot < fill_cols.size(); ++slot) {
        const std::size_t dst = fill_cols[slot];
        bool placed = false;
        while (cursor < a) {
            std::vector<double> cand(a, 0.0);
            cand[cursor++] = 1.0;
            const double nrm = orthonormalize(cand);
            if (nrm > 0.1) {
                for (std::size_t i = 0; i < a; ++i) f.u.at(i, dst) = cand[i] / nrm;
                set_cols.push_back(dst);
                placed = true;
                break;
            }
        }
        if (placed) continue;
        // Candidate list exhausted; retry every direction and keep the best.
        std::vector<double> best;
        double best_nrm = 0.0;
        for (std::size_t k = 0; k < a; ++k) {
            std::vector<double> cand(a, 0.0);
            cand[k] = 1.0;
            const double nrm = orthonormalize(cand);
            if (nrm > best_nrm) {
                best_nrm = nrm;
                best = std::move(cand);
            }
        }
        if (best_nrm <= 1e-6) {
            throw NumericalError("failed to complete orthonormal basis for left factor", sweep);
        }
        for (std::size_t i = 0; i < a; ++i) f.u.at(i, dst) = best[i] / best_nrm;
        set_cols.push_back(dst);
    }
    return f;
}

// Deterministic sign choice: the largest-magnitude entry of every left
// singular vector is made nonnegative, flipping the paired row of v when
// there is one.
inline void fix_signs(SvdFactors& f) {
    const std::size_t a = f.u.rows;
    for (std::size_t j = 0; j < a; ++j) {
        std::size_t imax = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < a; ++i) {
            const double mag = std::fabs(f.u.at(i, j));
            if (mag > best) {
                best = mag;
                imax = i;
            }
        }
        if (f.u.at(imax, j) >= 0.0) continue;
        for (std::size_t i = 0; i < a; ++i) f.u.at(i, j) = -f.u.at(i, j);
        if (j < f.s.size()) {
            for (std::size_t i = 0; i < f.v.cols; ++i) f.v.at(j, i) = -f.v.at(j, i);
        }
    }
}

}  // namespace detail

inline SvdFactors svd(const Matrix& m) {
    if (m.rows == 0 || m.cols == 0) {
        throw ShapeError("svd input must be non-empty");
    }
    m.require_finite("svd input");
    SvdFactors f;
    if (m.rows >= m.cols) {
        f = detail::jacobi_svd(m);
    } else {
        // Wide input: decompose the transpose and swap the roles of the factors.
        SvdFactors ft = detail::jacobi_svd(m.transposed());
        f.u = ft.v.transposed();
        f.s = std::move(ft.s);
        f.v = ft.u.transposed();
    }
    detail::fix_signs(f);
    return f;
}

}  // namespace dsvq
