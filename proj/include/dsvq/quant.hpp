#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dsvq/common.hpp"
#include "dsvq/matrix.hpp"

namespace dsvq {

enum class Granularity {
    PerTensor,
    PerChannelRows,
    PerChannelCols,
    Group,
};

inline const char* granularity_name(Granularity g) {
    switch (g) {
        case Granularity::PerTensor: return "per-tensor";
        case Granularity::PerChannelRows: return "per-channel-rows";
        case Granularity::PerChannelCols: return "per-channel-cols";
        case Granularity::Group: return "group";
    }
    return "unknown";
}

struct QuantConfig {
    int bits = 4;
    Granularity gran = Granularity::PerTensor;
    // Rows per group within each column; used only when gran == Group.
    std::size_t group_size = 0;

    void validate() const {
        if (bits < 2 || bits > 16) {
            throw InvalidInputError("bit width must be in [2, 16], got " + std::to_string(bits));
        }
        if (gran == Granularity::Group && group_size == 0) {
            throw InvalidInputError("group granularity needs a positive group_size");
        }
    }

    std::int64_t level_count() const { return (std::int64_t{1} << bits) - 1; }
};

// Maps matrix entries to quantization groups. Weights follow the
// inputs x outputs layout, so group granularity slices runs of group_size
// consecutive rows within each column and per-channel-cols means one group
// per output channel.
struct GroupMap {
    Granularity gran = Granularity::PerTensor;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t group_size = 0;
    std::size_t groups_per_col = 0;
    std::size_t count = 0;

    static GroupMap make(std::size_t rows, std::size_t cols, const QuantConfig& cfg) {
        cfg.validate();
        GroupMap m;
        m.gran = cfg.gran;
        m.rows = rows;
        m.cols = cols;
        m.group_size = cfg.group_size;
        switch (cfg.gran) {
            case Granularity::PerTensor:
                m.count = 1;
                break;
            case Granularity::PerChannelRows:
                m.count = rows;
                break;
            case Granularity::PerChannelCols:
                m.count = cols;
                break;
            case Granularity::Group:
                m.groups_per_col = (rows + cfg.group_size - 1) / cfg.group_size;
                m.count = cols * m.groups_per_col;
                break;
        }
        return m;
    }

    std::size_t group_of(std::size_t i, std::size_t j) const {
        switch (gran) {
            case Granularity::PerTensor: return 0;
            case Granularity::PerChannelRows: return i;
            case Granularity::PerChannelCols: return j;
            case Granularity::Group: return j * groups_per_col + i / group_size;
        }
        return 0;
    }

    // True when rows is not a multiple of group_size, leaving a short last
    // group in each column.
    bool ragged() const {
        return gran == Granularity::Group && rows % group_size != 0;
    }
};

// Learnable clip factors, one pair per group, stored as logits so the
// effective factors sigmoid(logit) stay inside (0, 1].
struct ClipParams {
    std::vector<double> gamma_logit;
    std::vector<double> beta_logit;

    static ClipParams with_logit(std::size_t groups, double logit) {
        ClipParams c;
        c.gamma_logit.assign(groups, logit);
        c.beta_logit.assign(groups, logit);
        return c;
    }

    // Clip factors exactly 1, so the clip range equals the raw min/max range.
    static ClipParams unit(std::size_t groups) { return with_logit(groups, kUnitClipLogit); }

    std::size_t size() const { return gamma_logit.size(); }
    double gamma(std::size_t g) const { return sigmoid(gamma_logit[g]); }
    double beta(std::size_t g) const { return sigmoid(beta_logit[g]); }

    void require_size(std::size_t groups) const {
        if (gamma_logit.size() != groups || beta_logit.size() != groups) {
            throw InvalidInputError("clip parameters sized for " +
                                    std::to_string(gamma_logit.size()) + " groups, expected " +
                                    std::to_string(groups));
        }
    }
};

// Resolved per-group quantization parameters plus the layout they were
// computed for. Degenerate groups (constant value, or a clip range collapsed
// to zero width) skip the integer grid and reconstruct a stored offset.
struct QuantParams {
    int bits = 4;
    Granularity gran = Granularity::PerTensor;
    std::size_t group_size = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::vector<double> scale;
    std::vector<std::int64_t> zero;
    std::vector<double> clip_lo;
    std::vector<double> clip_hi;
    std::vector<double> min_val;
    std::vector<double> max_val;
    std::vector<std::uint8_t> degenerate;
    std::vector<double> offset;

    std::size_t groups() const { return scale.size(); }

    QuantConfig config() const {
        QuantConfig cfg;
        cfg.bits = bits;
        cfg.gran = gran;
        cfg.group_size = group_size;
        return cfg;
    }

    GroupMap map() const { return GroupMap::make(rows, cols, config()); }

    // Dequantized value of the lowest and highest code for group g.
    double grid_lo(std::size_t g) const { return -static_cast<double>(zero[g]) * scale[g]; }
    double grid_hi(std::size_t g) const {
        return static_cast<double>(config().level_count() - zero[g]) * scale[g];
    }
};

struct IntCodes {
    std::size_t rows = 0;
    std::size_t cols = 0;
    int bits = 4;
    std::vector<std::int32_t> codes;

    std::int32_t at(std::size_t i, std::size_t j) const { return codes[i * cols + j]; }
    std::int32_t& at(std::size_t i, std::size_t j) { return codes[i * cols + j]; }
};

// Pass-through indicator for the clipped-range gradient rule: 1 where the
// (transformed) weight lies inside its group's clip interval, 0 outside.
struct SteMask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> on;

    bool at(std::size_t i, std::size_t j) const { return on[i * cols + j] != 0; }
};

inline QuantParams compute_params(const Matrix& w, const QuantConfig& cfg,
                                  const ClipParams& clip) {
    w.require_finite("quantizer input");
    const GroupMap map = GroupMap::make(w.rows, w.cols, cfg);
    clip.require_size(map.count);

    QuantParams p;
    p.bits = cfg.bits;
    p.gran = cfg.gran;
    p.group_size = cfg.group_size;
    p.rows = w.rows;
    p.cols = w.cols;
    p.min_val.assign(map.count, std::numeric_limits<double>::infinity());
    p.max_val.assign(map.count, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < w.rows; ++i) {
        for (std::size_t j = 0; j < w.cols; ++j) {
            const std::size_t g = map.group_of(i, j);
            const double x = w.at(i, j);
            p.min_val[g] = std::min(p.min_val[g], x);
            p.max_val[g] = std::max(p.max_val[g], x);
        }
    }

    const double levels = static_cast<double>(cfg.level_count());
    p.scale.assign(map.count, 1.0);
    p.zero.assign(map.count, 0);
    p.clip_lo.assign(map.count, 0.0);
    p.clip_hi.assign(map.count, 0.0);
    p.degenerate.assign(map.count, 0);
    p.offset.assign(map.count, 0.0);
    for (std::size_t g = 0; g < map.count; ++g) {
        const double mn = p.min_val[g];
        const double mx = p.max_val[g];
        if (!(mn <= mx)) {
            throw InvalidInputError("empty quantization group " + std::to_string(g));
        }
        if (mn == mx) {
            // Constant group: no usable range. Encode the value itself so
            // dequantization is exact regardless of the clip factors.
            p.degenerate[g] = 1;
            p.offset[g] = mn;
            p.clip_lo[g] = mn;
            p.clip_hi[g] = mn;
            continue;
        }
        const double cl = sigmoid(clip.beta_logit[g]) * mn;
        const double ch = sigmoid(clip.gamma_logit[g]) * mx;
        if (!(ch - cl > 0.0)) {
            // Clip factors collapsed the interval (possible when the group
            // does not straddle zero). Treat like a constant group.
            p.degenerate[g] = 1;
            p.offset[g] = 0.5 * (cl + ch);
            p.clip_lo[g] = p.offset[g];
            p.clip_hi[g] = p.offset[g];
            continue;
        }
        p.clip_lo[g] = cl;
        p.clip_hi[g] = ch;
        // The grid always covers zero, so the zero point is an exact integer
        // and representable values include 0.
        const double range_lo = std::min(cl, 0.0);
        const double range_hi = std::max(ch, 0.0);
        double scale = (range_hi - range_lo) / levels;
        std::int64_t zero = static_cast<std::int64_t>(
            std::clamp(std::round(-range_lo / scale), 0.0, levels));
        // Stabilize scale so a dequantized grid is a fixed point of this
        // computation: recomputing params from the grid extremes must yield
        // the same scale bitwise, otherwise a second quantization pass would
        // shift every value by an ulp. The loop replays the exact arithmetic
        // a recomputation would perform and converges within a step or two.
        for (int iter = 0; iter < 8; ++iter) {
            const double grid_lo = static_cast<double>(-zero) * scale;
            const double grid_hi = static_cast<double>(cfg.level_count() - zero) * scale;
            const double next_scale = (std::max(grid_hi, 0.0) - std::min(grid_lo, 0.0)) / levels;
            const std::int64_t next_zero = static_cast<std::int64_t>(
                std::clamp(std::round(-std::min(grid_lo, 0.0) / next_scale), 0.0, levels));
            if (next_scale == scale && next_zero == zero) break;
            scale = next_scale;
            zero = next_zero;
        }
        p.scale[g] = scale;
        p.zero[g] = zero;
    }
    return p;
}

inline void require_config_match(const QuantParams& p, const QuantConfig& cfg) {
    cfg.validate();
    if (p.bits != cfg.bits || p.gran != cfg.gran ||
        (cfg.gran == Granularity::Group && p.group_size != cfg.group_size)) {
        throw InvalidInputError("quantization config does not match the parameters it is used "
                                "with (bits/granularity/group size)");
    }
}

inline IntCodes quantize(const Matrix& w, const QuantParams& p) {
    w.require_finite("quantizer input");
    if (w.rows != p.rows || w.cols != p.cols) {
        throw ShapeError("quantize shape mismatch: weights " + w.shape_str() +
                         " vs parameters for " + std::to_string(p.rows) + "x" +
                         std::to_string(p.cols));
    }
    const GroupMap map = p.map();
    const double levels = static_cast<double>(p.config().level_count());
    IntCodes q;
    q.rows = w.rows;
    q.cols = w.cols;
    q.bits = p.bits;
    q.codes.resize(w.size());
    for (std::size_t i = 0; i < w.rows; ++i) {
        for (std::size_t j = 0; j < w.cols; ++j) {
            const std::size_t g = map.group_of(i, j);
            if (p.degenerate[g]) {
                q.at(i, j) = 0;
                continue;
            }
            const double t = std::round(w.at(i, j) / p.scale[g]) + static_cast<double>(p.zero[g]);
            q.at(i, j) = static_cast<std::int32_t>(std::clamp(t, 0.0, levels));
        }
    }
    return q;
}

inline Matrix dequantize(const IntCodes& q, const QuantParams& p) {
    if (q.rows != p.rows || q.cols != p.cols) {
        throw ShapeError("dequantize shape mismatch: codes " + std::to_string(q.rows) + "x" +
                         std::to_string(q.cols) + " vs parameters for " + std::to_string(p.rows) +
                         "x" + std::to_string(p.cols));
    }
    if (q.bits != p.bits) {
        throw InvalidInputError("code bit width " + std::to_string(q.bits) +
                                " does not match parameter bit width " + std::to_string(p.bits));
    }
    const GroupMap map = p.map();
    const std::int32_t top = static_cast<std::int32_t>(p.config().level_count());
    Matrix out(q.rows, q.cols);
    for (std::size_t i = 0; i < q.rows; ++i) {
        for (std::size_t j = 0; j < q.cols; ++j) {
            const std::int32_t c = q.at(i, j);
            if (c < 0 || c > top) {
                throw InvalidInputError("code " + std::to_string(c) + " at (" + std::to_string(i) +
                                        ", " + std::to_string(j) + ") outside [0, " +
                                        std::to_string(top) + "]");
            }
            const std::size_t g = map.group_of(i, j);
            out.at(i, j) = p.degenerate[g]
                               ? p.offset[g]
                               : static_cast<double>(c - p.zero[g]) * p.scale[g];
        }
    }
    return out;
}

inline IntCodes quantize(const Matrix& w, const QuantParams& p, const QuantConfig& cfg) {
    require_config_match(p, cfg);
    return quantize(w, p);
}

inline Matrix dequantize(const IntCodes& q, const QuantParams& p, const QuantConfig& cfg) {
    require_config_match(p, cfg);
    return dequantize(q, p);
}

struct FakeQuantResult {
    Matrix value;
    SteMask mask;
    QuantParams params;
    IntCodes codes;
};

// Round trip through the integer grid in one call. The mask records which
// entries sat inside the clip interval and therefore pass gradient through
// under the straight-through rule.
inline FakeQuantResult fake_quant(const Matrix& w, const QuantConfig& cfg,
                                  const ClipParams& clip) {
    FakeQuantResult r;
    r.params = compute_params(w, cfg, clip);
    r.codes = quantize(w, r.params);
    r.value = dequantize(r.codes, r.params);
    const GroupMap map = r.params.map();
    r.mask.rows = w.rows;
    r.mask.cols = w.cols;
    r.mask.on.resize(w.size());
    for (std::size_t i = 0; i < w.rows; ++i) {
        for (std::size_t j = 0; j < w.cols; ++j) {
            const std::size_t g = map.group_of(i, j);
            const double x = w.at(i, j);
            r.mask.on[i * w.cols + j] =
                (x >= r.params.clip_lo[g] && x <= r.params.clip_hi[g]) ? 1 : 0;
        }
    }
    return r;
}

inline FakeQuantResult fake_quant(const Matrix& w, const QuantConfig& cfg) {
    const GroupMap map = GroupMap::make(w.rows, w.cols, cfg);
    return fake_quant(w, cfg, ClipParams::unit(map.count));
}

}  // namespace dsvq
