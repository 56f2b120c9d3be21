#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dsvq/band.hpp"
#include "dsvq/matrix.hpp"
#include "dsvq/quant.hpp"
#include "dsvq/svd.hpp"

namespace dsvq {

// Per-entry slack before the integer code would change, under quantization
// parameters held fixed at the values computed from this matrix. Unsaturated
// entries carry the symmetric distance to the nearest rounding boundary;
// entries clamped at a code-range end carry the inward distance to the
// de-clamping threshold, with the outward direction unbounded (capped at
// kHeadroomCap when used in arithmetic).
struct ErrorMatrix {
    Matrix headroom;
    SteMask saturated;
    QuantParams params;

    bool saturated_at(std::size_t i, std::size_t j) const { return saturated.at(i, j); }
};

inline ErrorMatrix error_matrix(const Matrix& w, const QuantConfig& cfg, const ClipParams& clip) {
    ErrorMatrix e;
    e.params = compute_params(w, cfg, clip);
    const GroupMap map = e.params.map();
    const double levels = static_cast<double>(cfg.level_count());
    e.headroom = Matrix(w.rows, w.cols);
    e.saturated.rows = w.rows;
    e.saturated.cols = w.cols;
    e.saturated.on.assign(w.size(), 0);
    for (std::size_t i = 0; i < w.rows; ++i) {
        for (std::size_t j = 0; j < w.cols; ++j) {
            const std::size_t g = map.group_of(i, j);
            const std::size_t idx = i * w.cols + j;
            if (e.params.degenerate[g]) {
                e.headroom.at(i, j) = 0.0;
                e.saturated.on[idx] = 1;
                continue;
            }
            const double s = e.params.scale[g];
            const double z = static_cast<double>(e.params.zero[g]);
            const double t = w.at(i, j) / s + z;
            const double r = std::round(t);
            if (r > levels) {
                // Clamped at the top: stays at the top code until t drops
                // below levels + 0.5.
                e.headroom.at(i, j) = (t - (levels + 0.5)) * s;
                e.saturated.on[idx] = 1;
            } else if (r < 0.0) {
                // Clamped at the bottom: stays at code 0 until t rises to -0.5.
                e.headroom.at(i, j) = (-0.5 - t) * s;
                e.saturated.on[idx] = 1;
            } else {
                e.headroom.at(i, j) = s * (0.5 - std::fabs(t - r));
            }
        }
    }
    return e;
}

struct FeasibilityReport {
    std::size_t total = 0;
    std::size_t feasible = 0;
    double fraction = 0.0;
    double max_violation = 0.0;
    bool all_feasible = false;
};

// Checks whether the dense perturbation u * Map(inc) * v stays within the
// per-entry headroom of m, entry for entry. When every entry is feasible, the
// integer codes of m + perturbation (under m's fixed parameters) provably
// match those of m.
inline FeasibilityReport feasibility_check(const Matrix& m, const BandIncrement& inc,
                                           const SvdFactors& f, const ErrorMatrix& e) {
    if (f.u.rows != m.rows || f.v.rows != m.cols) {
        throw ShapeError("factors for " + std::to_string(f.u.rows) + "x" +
                         std::to_string(f.v.rows) + " do not match matrix " + m.shape_str());
    }
    if (e.headroom.rows != m.rows || e.headroom.cols != m.cols) {
        throw ShapeError("error matrix " + e.headroom.shape_str() + " does not match matrix " +
                         m.shape_str());
    }
    const Matrix p = matmul(matmul(f.u, map_band(inc, m.rows, m.cols)), f.v);
    FeasibilityReport report;
    report.total = m.size();
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            const double mag = std::fabs(p.at(i, j));
            const double cap = std::min(e.headroom.at(i, j), kHeadroomCap);
            if (mag <= cap) {
                ++report.feasible;
            } else {
                report.max_violation = std::max(report.max_violation, mag - cap);
            }
        }
    }
    report.fraction = static_cast<double>(report.feasible) / static_cast<double>(report.total);
    report.all_feasible = report.feasible == report.total;
    return report;
}

}  // namespace dsvq
