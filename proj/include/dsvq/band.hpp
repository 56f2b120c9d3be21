#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsvq/matrix.hpp"
#include "dsvq/svd.hpp"

namespace dsvq {

// Learnable values on the 2*n_diag+1 diagonals around the main diagonal of an
// a x b rectangle. Row r of values holds the diagonal at offset o = r - n_diag;
// column j owns the entry placed at (j + o, j). n_diag = 0 reduces to a plain
// additive singular-value increment.
struct BandIncrement {
    std::size_t n_diag = 0;
    std::size_t b = 0;
    Matrix values;

    static BandIncrement zeros(std::size_t n_diag, std::size_t b) {
        BandIncrement inc;
        inc.n_diag = n_diag;
        inc.b = b;
        inc.values = Matrix(2 * n_diag + 1, b);
        return inc;
    }

    double& at_offset(std::int64_t o, std::size_t j) {
        return values.at(static_cast<std::size_t>(o + static_cast<std::int64_t>(n_diag)), j);
    }
    double at_offset(std::int64_t o, std::size_t j) const {
        return values.at(static_cast<std::size_t>(o + static_cast<std::int64_t>(n_diag)), j);
    }

    void validate() const {
        if (values.rows != 2 * n_diag + 1 || values.cols != b) {
            throw ShapeError("band increment values must be " + std::to_string(2 * n_diag + 1) +
                             "x" + std::to_string(b) + ", got " + values.shape_str());
        }
        values.require_finite("band increment values");
    }
};

// Dense placement of the band values into an a x b matrix. Placements whose
// row j + o falls outside [0, a) are skipped; those slots stay unused and
// their gradients are forced to zero in grad_band.
inline Matrix map_band(const BandIncrement& inc, std::size_t a, std::size_t b) {
    inc.validate();
    if (inc.b != b) {
        throw ShapeError("band increment built for inner dimension " + std::to_string(inc.b) +
                         ", requested " + std::to_string(b));
    }
    if (a < b) {
        throw ShapeError("band placement requires rows >= cols, got " + std::to_string(a) + "x" +
                         std::to_string(b) + "; decompose the transpose instead");
    }
    Matrix out(a, b);
    const std::int64_t n = static_cast<std::int64_t>(inc.n_diag);
    for (std::int64_t o = -n; o <= n; ++o) {
        for (std::size_t j = 0; j < b; ++j) {
            const std::int64_t row = static_cast<std::int64_t>(j) + o;
            if (row < 0 || row >= static_cast<std::int64_t>(a)) continue;
            out.at(static_cast<std::size_t>(row), j) = inc.at_offset(o, j);
        }
    }
    return out;
}

// Combined inner matrix: the rectangular diagonal of the singular values plus
// the band placement.
inline Matrix build_d(const std::vector<double>& s, const BandIncrement& inc, std::size_t a,
                      std::size_t b) {
    if (s.size() != b) {
        throw ShapeError("build_d needs " + std::to_string(b) + " singular values, got " +
                         std::to_string(s.size()));
    }
    Matrix d = map_band(inc, a, b);
    for (std::size_t j = 0; j < b; ++j) d.at(j, j) += s[j];
    return d;
}

inline Matrix reconstruct_weight(const Matrix& u, const Matrix& d, const Matrix& v) {
    if (u.rows != u.cols || v.rows != v.cols || d.rows != u.cols || d.cols != v.rows) {
        throw ShapeError("reconstruct_weight shape mismatch: u " + u.shape_str() + ", d " +
                         d.shape_str() + ", v " + v.shape_str());
    }
    return matmul(matmul(u, d), v);
}

// Plain additive increment on the singular values. Delegates to the band path
// with n_diag = 0 so both routes produce bitwise-identical results.
inline Matrix lsi_reconstruct(const Matrix& u, const std::vector<double>& s,
                              const std::vector<double>& i, const Matrix& v) {
    if (i.size() != s.size()) {
        throw ShapeError("increment length " + std::to_string(i.size()) +
                         " does not match singular value count " + std::to_string(s.size()));
    }
    const std::size_t b = v.rows;
    if (s.size() != b) {
        throw ShapeError("lsi_reconstruct needs " + std::to_string(b) + " singular values, got " +
                         std::to_string(s.size()));
    }
    BandIncrement inc = BandIncrement::zeros(0, b);
    for (std::size_t j = 0; j < b; ++j) inc.values.at(0, j) = i[j];
    return reconstruct_weight(u, build_d(s, inc, u.rows, b), v);
}

// Adjoint of the reconstruction with respect to the band values: with
// upstream = dL/dM' and M' = u * (diag + Map(inc)) * v, the inner gradient is
// u^T * upstream * v^T and the band gradient gathers its banded entries.
inline Matrix grad_band(const Matrix& upstream, const Matrix& u, const Matrix& v,
                        std::size_t n_diag) {
    if (upstream.rows != u.rows || upstream.cols != v.cols) {
        throw ShapeError("upstream gradient " + upstream.shape_str() + " does not match u " +
                         u.shape_str() + " and v " + v.shape_str());
    }
    const std::size_t a = u.rows;
    const std::size_t b = v.rows;
    const Matrix inner = matmul(matmul(u.transposed(), upstream), v.transposed());
    Matrix grad(2 * n_diag + 1, b);
    const std::int64_t n = static_cast<std::int64_t>(n_diag);
    for (std::int64_t o = -n; o <= n; ++o) {
        for (std::size_t j = 0; j < b; ++j) {
            const std::int64_t row = static_cast<std::int64_t>(j) + o;
            if (row < 0 || row >= static_cast<std::int64_t>(a)) continue;
            grad.at(static_cast<std::size_t>(o + n), j) = inner.at(static_cast<std::size_t>(row), j);
        }
    }
    return grad;
}

}  // namespace dsvq
