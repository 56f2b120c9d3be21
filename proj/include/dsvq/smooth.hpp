#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dsvq/common.hpp"
#include "dsvq/matrix.hpp"

namespace dsvq {

// Channel-wise equivalent transform: activations are shifted and divided by a
// positive per-channel factor, weights take the factor, and the bias absorbs
// the shift, leaving the layer output unchanged. Scales are stored as logs so
// gradient updates cannot drive them nonpositive.
struct SmoothParams {
    std::vector<double> log_scale;
    std::vector<double> shift;

    static SmoothParams identity(std::size_t channels) {
        SmoothParams p;
        p.log_scale.assign(channels, 0.0);
        p.shift.assign(channels, 0.0);
        return p;
    }

    std::size_t size() const { return log_scale.size(); }

    double scale_at(std::size_t c) const {
        const double s = std::exp(log_scale[c]);
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw InvalidInputError("smooth scale for channel " + std::to_string(c) +
                                    " is not a positive finite value");
        }
        return s;
    }

    void require_size(std::size_t channels) const {
        if (log_scale.size() != channels || shift.size() != channels) {
            throw ShapeError("smooth parameters sized for " + std::to_string(log_scale.size()) +
                             " channels, expected " + std::to_string(channels));
        }
    }
};

struct SmoothedLayer {
    Matrix x_t;
    Matrix w_t;
    std::vector<double> b_t;
};

inline SmoothedLayer apply_smooth(const Matrix& x, const Matrix& w, const std::vector<double>& b,
                                  const SmoothParams& p) {
    if (x.cols != w.rows) {
        throw ShapeError("smooth input/weight mismatch: " + x.shape_str() + " vs " +
                         w.shape_str());
    }
    if (b.size() != w.cols) {
        throw ShapeError("bias length " + std::to_string(b.size()) + " does not match " +
                         std::to_string(w.cols) + " output channels");
    }
    p.require_size(w.rows);
    x.require_finite("smooth activation input");
    w.require_finite("smooth weight input");

    const std::size_t in = w.rows;
    std::vector<double> s(in);
    for (std::size_t c = 0; c < in; ++c) s[c] = p.scale_at(c);

    SmoothedLayer out;
    out.x_t = Matrix(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t c = 0; c < in; ++c) {
            out.x_t.at(i, c) = (x.at(i, c) - p.shift[c]) / s[c];
        }
    }
    out.w_t = Matrix(w.rows, w.cols);
    for (std::size_t c = 0; c < in; ++c) {
        for (std::size_t j = 0; j < w.cols; ++j) {
            out.w_t.at(c, j) = s[c] * w.at(c, j);
        }
    }
    out.b_t = b;
    for (std::size_t j = 0; j < w.cols; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < in; ++c) acc += p.shift[c] * w.at(c, j);
        out.b_t[j] += acc;
    }
    return out;
}

struct RecoveredLayer {
    Matrix w;
    std::vector<double> b;
};

inline RecoveredLayer invert_smooth(const Matrix& w_t, const std::vector<double>& b_t,
                                    const SmoothParams& p) {
    if (b_t.size() != w_t.cols) {
        throw ShapeError("bias length " + std::to_string(b_t.size()) + " does not match " +
                         std::to_string(w_t.cols) + " output channels");
    }
    p.require_size(w_t.rows);
    w_t.require_finite("smooth weight input");

    RecoveredLayer out;
    out.w = Matrix(w_t.rows, w_t.cols);
    for (std::size_t c = 0; c < w_t.rows; ++c) {
        const double s = p.scale_at(c);
        for (std::size_t j = 0; j < w_t.cols; ++j) {
            out.w.at(c, j) = w_t.at(c, j) / s;
        }
    }
    out.b = b_t;
    for (std::size_t j = 0; j < w_t.cols; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < w_t.rows; ++c) acc += p.shift[c] * out.w.at(c, j);
        out.b[j] -= acc;
    }
    return out;
}

// Activation-aware starting point: shift to the per-channel activation mean,
// then balance magnitudes between the shifted activations and the weight rows
// with migration strength 0.5. Factors are clamped so extreme channels cannot
// blow up the transformed weights.
inline SmoothParams smooth_init(const Matrix& x, const Matrix& w) {
    if (x.cols != w.rows) {
        throw ShapeError("smooth init input/weight mismatch: " + x.shape_str() + " vs " +
                         w.shape_str());
    }
    x.require_finite("smooth init activations");
    w.require_finite("smooth init weights");

    SmoothParams p;
    const std::size_t in = w.rows;
    p.shift.resize(in);
    p.log_scale.resize(in);
    for (std::size_t c = 0; c < in; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) mean += x.at(i, c);
        mean /= static_cast<double>(x.rows);
        p.shift[c] = mean;

        double amax = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) {
            amax = std::max(amax, std::fabs(x.at(i, c) - mean));
        }
        double wmax = 0.0;
        for (std::size_t j = 0; j < w.cols; ++j) {
            wmax = std::max(wmax, std::fabs(w.at(c, j)));
        }
        double s = 1.0;
        if (amax > 0.0 && wmax > 0.0) {
            s = std::sqrt(amax) / std::sqrt(wmax);
            s = std::clamp(s, 1e-3, 1e3);
        }
        p.log_scale[c] = std::log(s);
    }
    return p;
}

}  // namespace dsvq
