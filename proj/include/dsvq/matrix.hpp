#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <initializer_list>
#include <string>
#include <thread>
#include <vector>

#include "dsvq/common.hpp"

namespace dsvq {

// Dense row-major matrix of doubles. All dimensions are positive; a
// default-constructed instance is the only empty state and is not a valid
// operand.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;

    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {
        if (r == 0 || c == 0) {
            throw ShapeError("matrix dimensions must be positive, got " + shape_str());
        }
    }

    Matrix(std::size_t r, std::size_t c, std::vector<double> values)
        : rows(r), cols(c), data(std::move(values)) {
        if (r == 0 || c == 0) {
            throw ShapeError("matrix dimensions must be positive, got " + shape_str());
        }
        if (data.size() != r * c) {
            throw ShapeError("matrix " + shape_str() + " needs " + std::to_string(r * c) +
                             " values, got " + std::to_string(data.size()));
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> init) {
        const std::size_t r = init.size();
        const std::size_t c = r > 0 ? init.begin()->size() : 0;
        Matrix m(r, c);
        std::size_t i = 0;
        for (const auto& row : init) {
            if (row.size() != c) {
                throw ShapeError("ragged row " + std::to_string(i) + " in matrix literal");
            }
            std::copy(row.begin(), row.end(), m.data.begin() + static_cast<std::ptrdiff_t>(i * c));
            ++i;
        }
        return m;
    }

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return rows * cols; }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }

    bool all_finite() const {
        for (double x : data) {
            if (!std::isfinite(x)) return false;
        }
        return true;
    }

    void require_finite(const std::string& what) const {
        if (!all_finite()) {
            throw InvalidInputError(what + " contains non-finite entries");
        }
    }

    Matrix transposed() const {
        Matrix t(cols, rows);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) t.at(j, i) = at(i, j);
        }
        return t;
    }
};

namespace detail {

// Thread count for the matmul kernel. DSVQ_THREADS caps it; unset or 1 keeps
// the kernel serial. Work is split by output row, so the result is identical
// for any thread count.
inline std::size_t matmul_threads() {
    static const std::size_t n = [] {
        const char* env = std::getenv("DSVQ_THREADS");
        if (env == nullptr) return std::size_t{1};
        const long v = std::strtol(env, nullptr, 10);
        if (v <= 1) return std::size_t{1};
        const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
        return std::min(static_cast<std::size_t>(v), hw);
    }();
    return n;
}

inline void matmul_rows(const Matrix& a, const Matrix& b, Matrix& out, std::size_t row_begin,
                        std::size_t row_end) {
    const std::size_t n = a.cols;
    for (std::size_t i = row_begin; i < row_end; ++i) {
        double* out_row = &out.data[i * out.cols];
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            const double* b_row = &b.data[k * b.cols];
            for (std::size_t j = 0; j < b.cols; ++j) out_row[j] += aik * b_row[j];
        }
    }
}

}  // namespace detail

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw ShapeError("matmul shape mismatch: " + a.shape_str() + " * " + b.shape_str());
    }
    Matrix out(a.rows, b.cols);
    const std::size_t threads = detail::matmul_threads();
    if (threads <= 1 || a.rows < 2 * threads || a.size() * b.cols < (std::size_t{1} << 20)) {
        detail::matmul_rows(a, b, out, 0, a.rows);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        const std::size_t chunk = (a.rows + threads - 1) / threads;
        for (std::size_t t = 0; t < threads; ++t) {
            const std::size_t lo = t * chunk;
            const std::size_t hi = std::min(a.rows, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(detail::matmul_rows, std::cref(a), std::cref(b), std::ref(out), lo,
                              hi);
        }
        for (auto& th : pool) th.join();
    }
    out.require_finite("matmul result");
    return out;
}

inline double frobenius_norm(const Matrix& m) {
    // Two-pass scaled sum, so large entries do not overflow the square.
    double mx = 0.0;
    for (double x : m.data) mx = std::max(mx, std::fabs(x));
    if (mx == 0.0) return 0.0;
    double acc = 0.0;
    for (double x : m.data) {
        const double r = x / mx;
        acc += r * r;
    }
    return mx * std::sqrt(acc);
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw ShapeError("max_abs_diff shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    }
    double mx = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        mx = std::max(mx, std::fabs(a.data[i] - b.data[i]));
    }
    return mx;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw ShapeError("add shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    }
    Matrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw ShapeError("sub shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    }
    Matrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

inline Matrix scaled(const Matrix& a, double k) {
    Matrix out = a;
    for (double& x : out.data) x *= k;
    return out;
}

inline double mean_squared_diff(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw ShapeError("mean_squared_diff shape mismatch: " + a.shape_str() + " vs " +
                         b.shape_str());
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

}  // namespace dsvq
