#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsvq/adamw.hpp"
#include "dsvq/band.hpp"
#include "dsvq/matrix.hpp"
#include "dsvq/model.hpp"
#include "dsvq/qmodel.hpp"
#include "dsvq/quant.hpp"
#include "dsvq/smooth.hpp"
#include "dsvq/svd.hpp"

namespace dsvq {

struct TrainConfig {
    int bits_w = 4;
    // 0 leaves activations in floating point; > 0 quantizes them per tensor
    // with dynamic range per batch.
    int bits_a = 0;
    Granularity gran = Granularity::PerChannelCols;
    std::size_t group_size = 0;
    // Diagonals extended on each side of the singular-value diagonal; clamped
    // per layer to min(in, out) - 1.
    std::size_t n_diag = 100;
    std::size_t steps = 200;
    // Calibration rows per step; 0 uses the whole calibration set every step.
    std::size_t batch = 0;
    double lr_band = 1.5e-4;
    double lr_aux = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    // Starting logit for the learnable clip factors, sigmoid(4) ~ 0.982. Unit
    // clipping (logit 40) would zero the sigmoid slope and freeze the factors.
    double clip_logit_init = 4.0;
    // Start the channel transform from activation statistics; disable to
    // start from the identity transform.
    bool analytic_smooth_init = true;
    std::uint64_t seed = 0;

    void validate() const {
        QuantConfig q;
        q.bits = bits_w;
        q.gran = gran;
        q.group_size = group_size;
        q.validate();
        if (bits_a != 0) {
            QuantConfig a;
            a.bits = bits_a;
            a.validate();
        }
        if (steps == 0) throw InvalidInputError("step count must be positive");
        if (!(lr_band > 0.0) || !(lr_aux > 0.0)) {
            throw InvalidInputError("learning rates must be positive");
        }
    }

    QuantConfig weight_quant() const {
        QuantConfig q;
        q.bits = bits_w;
        q.gran = gran;
        q.group_size = group_size;
        return q;
    }

    AdamConfig band_adam() const { return {lr_band, beta1, beta2, epsilon, weight_decay}; }
    AdamConfig aux_adam() const { return {lr_aux, beta1, beta2, epsilon, weight_decay}; }
};

struct CalibRecord {
    std::vector<double> losses;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::size_t steps_run = 0;
    std::string status;
    double wall_ms = 0.0;
};

// Per-layer quantization context for the standalone quantized forward path.
// Empty smooth/clip containers mean identity transform and unit clipping.
// fixed_params bypasses parameter computation and quantizes against a given
// grid (used when evaluating with frozen parameters).
struct LayerQuantState {
    QuantConfig wq;
    int act_bits = 0;
    SmoothParams smooth;
    ClipParams clip;
    std::optional<Matrix> weight_override;
    std::optional<QuantParams> fixed_params;
};

struct BlockQuantState {
    std::vector<LayerQuantState> layers;
};

inline Matrix block_forward(const Block& block, const Matrix& x, const BlockQuantState& qs) {
    block.validate();
    if (qs.layers.size() != block.layers.size()) {
        throw ShapeError("quant context covers " + std::to_string(qs.layers.size()) +
                         " layers, block has " + std::to_string(block.layers.size()));
    }
    Matrix h = x;
    for (std::size_t k = 0; k < block.layers.size(); ++k) {
        const LinearLayer& layer = block.layers[k];
        const LayerQuantState& st = qs.layers[k];
        const Matrix& w0 = st.weight_override ? *st.weight_override : layer.w;
        if (w0.rows != layer.w.rows || w0.cols != layer.w.cols) {
            throw ShapeError("weight override " + w0.shape_str() + " does not match layer '" +
                             layer.name + "' " + layer.w.shape_str());
        }
        const SmoothParams sp =
            st.smooth.size() == 0 ? SmoothParams::identity(w0.rows) : st.smooth;
        SmoothedLayer sm = apply_smooth(h, w0, layer.bias, sp);

        Matrix wq;
        if (st.fixed_params) {
            wq = dequantize(quantize(sm.w_t, *st.fixed_params), *st.fixed_params);
        } else {
            const GroupMap map = GroupMap::make(sm.w_t.rows, sm.w_t.cols, st.wq);
            const ClipParams clip =
                st.clip.size() == 0 ? ClipParams::unit(map.count) : st.clip;
            wq = fake_quant(sm.w_t, st.wq, clip).value;
        }
        Matrix xq = std::move(sm.x_t);
        if (st.act_bits > 0) {
            QuantConfig acfg;
            acfg.bits = st.act_bits;
            acfg.gran = Granularity::PerTensor;
            xq = fake_quant(xq, acfg).value;
        }
        Matrix y = matmul(xq, wq);
        for (std::size_t i = 0; i < y.rows; ++i) {
            for (std::size_t j = 0; j < y.cols; ++j) y.at(i, j) += sm.b_t[j];
        }
        h = std::move(y);
        if (k + 1 < block.layers.size()) h = apply_activation(h, block.act);
    }
    return h;
}

inline double block_loss(const Block& block, const BlockQuantState& qs, const Matrix& x) {
    return mean_squared_diff(block_forward(block, x), block_forward(block, x, qs));
}

// Which forward to differentiate. Quantized is the real integer round trip
// with straight-through gradients; ClipSurrogate replaces the rounding with a
// plain clamp to the clip interval, whose exact gradient coincides with the
// straight-through rule. Finite-difference checks run on the surrogate, since
// the rounded forward is piecewise constant in the band parameters.
enum class ForwardMode { Quantized, ClipSurrogate };

// Trains band increments, channel transforms, and clip factors of one block
// against its full-precision outputs. The SVD of every weight is taken once
// up front; each step rebuilds the weight from the factors plus the current
// band values, pushes a batch through the quantized forward, and follows
// analytic gradients (straight-through where rounding appears).
class BlockCalibrator {
public:
    BlockCalibrator(const Block& block, const Matrix& calib, const TrainConfig& cfg)
        : block_(block), cfg_(cfg), x_pool_(calib) {
        cfg_.validate();
        block_.validate();
        if (calib.cols != block_.in_dim()) {
            throw ShapeError("calibration data " + calib.shape_str() +
                             " does not match block input dim " +
                             std::to_string(block_.in_dim()));
        }
        calib.require_finite("calibration data");
        target_pool_ = block_forward(block_, x_pool_);

        // Plain-path intermediate inputs seed the per-layer transform init.
        Matrix plain_in = x_pool_;
        for (std::size_t k = 0; k < block_.layers.size(); ++k) {
            const LinearLayer& layer = block_.layers[k];
            LayerState st;
            const bool transpose = layer.in_dim() < layer.out_dim();
            st.transposed = transpose;
            const Matrix target_w = transpose ? layer.w.transposed() : layer.w;
            st.factors = svd(target_w);
            st.a = target_w.rows;
            st.b = target_w.cols;
            st.n_diag = std::min(cfg_.n_diag, st.b > 0 ? st.b - 1 : 0);
            st.inc = BandIncrement::zeros(st.n_diag, st.b);
            st.smooth = cfg_.analytic_smooth_init ? smooth_init(plain_in, layer.w)
                                                  : SmoothParams::identity(layer.in_dim());
            const GroupMap map = GroupMap::make(layer.w.rows, layer.w.cols, cfg_.weight_quant());
            st.clip = ClipParams::with_logit(map.count, cfg_.clip_logit_init);
            layers_.push_back(std::move(st));

            plain_in = layer_forward(layer, plain_in);
            if (k + 1 < block_.layers.size()) plain_in = apply_activation(plain_in, block_.act);
        }
    }

    std::size_t band_param_count() const {
        std::size_t n = 0;
        for (const LayerState& st : layers_) n += st.inc.values.size();
        return n;
    }

    std::size_t aux_param_count() const {
        std::size_t n = 0;
        for (const LayerState& st : layers_) {
            n += st.smooth.size() * 2 + st.clip.size() * 2;
        }
        return n;
    }

    std::vector<double> band_params() const {
        std::vector<double> out;
        out.reserve(band_param_count());
        for (const LayerState& st : layers_) {
            out.insert(out.end(), st.inc.values.data.begin(), st.inc.values.data.end());
        }
        return out;
    }

    void set_band_params(const std::vector<double>& flat) {
        if (flat.size() != band_param_count()) {
            throw ShapeError("band parameter vector has wrong length");
        }
        std::size_t pos = 0;
        for (LayerState& st : layers_) {
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), st.inc.values.size(),
                        st.inc.values.data.begin());
            pos += st.inc.values.size();
        }
    }

    std::vector<double> aux_params() const {
        std::vector<double> out;
        out.reserve(aux_param_count());
        for (const LayerState& st : layers_) {
            out.insert(out.end(), st.smooth.log_scale.begin(), st.smooth.log_scale.end());
            out.insert(out.end(), st.smooth.shift.begin(), st.smooth.shift.end());
            out.insert(out.end(), st.clip.gamma_logit.begin(), st.clip.gamma_logit.end());
            out.insert(out.end(), st.clip.beta_logit.begin(), st.clip.beta_logit.end());
        }
        return out;
    }

    void set_aux_params(const std::vector<double>& flat) {
        if (flat.size() != aux_param_count()) {
            throw ShapeError("aux parameter vector has wrong length");
        }
        std::size_t pos = 0;
        auto take = [&](std::vector<double>& dst) {
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), dst.size(), dst.begin());
            pos += dst.size();
        };
        for (LayerState& st : layers_) {
            take(st.smooth.log_scale);
            take(st.smooth.shift);
            take(st.clip.gamma_logit);
            take(st.clip.beta_logit);
        }
    }

    // Captures weight-group and activation statistics from a full-pool pass
    // with the current parameters. The surrogate forward clamps against these
    // instead of live statistics, so finite differences see a locally smooth
    // objective.
    void freeze_stats() {
        std::vector<LayerCache> caches;
        forward(x_pool_, ForwardMode::Quantized, &caches);
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            LayerState& st = layers_[k];
            st.frozen_min = caches[k].w_mn;
            st.frozen_max = caches[k].w_mx;
            const auto [lo, hi] =
                std::minmax_element(caches[k].x_t.data.begin(), caches[k].x_t.data.end());
            st.act_lo = *lo;
            st.act_hi = *hi;
            st.frozen_valid = true;
        }
    }

    double loss(ForwardMode mode) {
        const Matrix out = forward(x_pool_, mode, nullptr);
        return mean_squared_diff(out, target_pool_);
    }

    struct GradPair {
        std::vector<double> band;
        std::vector<double> aux;
    };

    std::pair<double, GradPair> loss_and_grads(ForwardMode mode) {
        return loss_and_grads_rows(x_pool_, target_pool_, mode);
    }

    CalibRecord train() {
        const auto t0 = std::chrono::steady_clock::now();
        CalibRecord rec;
        rec.initial_loss = loss(ForwardMode::Quantized);
        rec.status = "completed";

        AdamState band_state(band_param_count());
        AdamState aux_state(aux_param_count());
        const AdamConfig band_cfg = cfg_.band_adam();
        const AdamConfig aux_cfg = cfg_.aux_adam();

        BatchPlan plan(x_pool_.rows, cfg_.batch, cfg_.seed);
        std::size_t diverged_streak = 0;
        for (std::size_t step = 0; step < cfg_.steps; ++step) {
            const std::vector<std::size_t> rows = plan.next();
            const Matrix xb = take_rows(x_pool_, rows);
            const Matrix tb = take_rows(target_pool_, rows);
            auto [batch_loss, grads] = loss_and_grads_rows(xb, tb, ForwardMode::Quantized);
            if (!std::isfinite(batch_loss)) {
                throw NumericalError("calibration loss became non-finite at step " +
                                         std::to_string(step),
                                     step);
            }
            rec.losses.push_back(batch_loss);
            if (batch_loss > 10.0 * rec.initial_loss) {
                if (++diverged_streak >= 20) {
                    rec.status = "diverged";
                    break;
                }
            } else {
                diverged_streak = 0;
            }

            std::vector<double> bp = band_params();
            adamw_step(bp, grads.band, band_state, band_cfg);
            set_band_params(bp);
            std::vector<double> ap = aux_params();
            adamw_step(ap, grads.aux, aux_state, aux_cfg);
            set_aux_params(ap);
        }
        rec.steps_run = rec.losses.size();
        rec.final_loss = loss(ForwardMode::Quantized);
        rec.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        return rec;
    }

    QuantizedBlock export_block() {
        QuantizedBlock qb;
        qb.act = block_.act;
        std::vector<LayerCache> caches;
        forward(x_pool_, ForwardMode::Quantized, &caches);
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            const LinearLayer& layer = block_.layers[k];
            QuantizedLayer ql;
            ql.name = layer.name;
            ql.codes = quantize(caches[k].w_t, caches[k].wp);
            ql.params = caches[k].wp;
            ql.smooth = layers_[k].smooth;
            ql.bias_t = caches[k].b_t;
            ql.act_bits = cfg_.bits_a;
            qb.layers.push_back(std::move(ql));
        }
        return qb;
    }

    const Matrix& target() const { return target_pool_; }
    const Block& block() const { return block_; }
    const LinearLayer& layer(std::size_t k) const { return block_.layers[k]; }
    const SvdFactors& factors(std::size_t k) const { return layers_[k].factors; }
    std::size_t layer_n_diag(std::size_t k) const { return layers_[k].n_diag; }

private:
    struct LayerState {
        SvdFactors factors;
        bool transposed = false;
        std::size_t a = 0;
        std::size_t b = 0;
        std::size_t n_diag = 0;
        BandIncrement inc;
        SmoothParams smooth;
        ClipParams clip;
        std::vector<double> frozen_min;
        std::vector<double> frozen_max;
        double act_lo = 0.0;
        double act_hi = 0.0;
        bool frozen_valid = false;
    };

    struct LayerCache {
        Matrix x_in;
        Matrix x_t;
        Matrix x_q;
        std::vector<std::uint8_t> x_mask;
        Matrix w_base;
        Matrix w_t;
        Matrix w_q;
        SteMask w_mask;
        QuantParams wp;
        std::vector<double> w_mn;
        std::vector<double> w_mx;
        std::vector<std::uint8_t> w_degen;
        std::vector<double> b_t;
        Matrix y;
    };

    // Deterministic batch scheduler: full pool in order when batch == 0,
    // otherwise a seeded shuffle consumed in slices and reshuffled per epoch.
    class BatchPlan {
    public:
        BatchPlan(std::size_t rows, std::size_t batch, std::uint64_t seed)
            : rows_(rows), batch_(batch == 0 || batch > rows ? rows : batch), gen_(seed ^ 0x9e3779b97f4a7c15ULL) {
            order_.resize(rows_);
            for (std::size_t i = 0; i < rows_; ++i) order_[i] = i;
            if (batch_ < rows_) shuffle();
        }

        std::vector<std::size_t> next() {
            std::vector<std::size_t> out;
            out.reserve(batch_);
            for (std::size_t n = 0; n < batch_; ++n) {
                if (pos_ == rows_) {
                    if (batch_ < rows_) shuffle();
                    pos_ = 0;
                }
                out.push_back(order_[pos_++]);
            }
            return out;
        }

    private:
        void shuffle() {
            for (std::size_t i = rows_ - 1; i > 0; --i) {
                const std::size_t j = static_cast<std::size_t>(gen_() % (i + 1));
                std::swap(order_[i], order_[j]);
            }
        }

        std::size_t rows_;
        std::size_t batch_;
        std::mt19937_64 gen_;
        std::vector<std::size_t> order_;
        std::size_t pos_ = 0;
    };

    static Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
        Matrix out(rows.size(), m.cols);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            std::copy_n(m.data.begin() + static_cast<std::ptrdiff_t>(rows[r] * m.cols), m.cols,
                        out.data.begin() + static_cast<std::ptrdiff_t>(r * m.cols));
        }
        return out;
    }

    Matrix rebuild_weight(const LayerState& st) const {
        const Matrix d = build_d(st.factors.s, st.inc, st.a, st.b);
        Matrix rec = reconstruct_weight(st.factors.u, d, st.factors.v);
        return st.transposed ? rec.transposed() : rec;
    }

    Matrix forward(const Matrix& x, ForwardMode mode, std::vector<LayerCache>* caches) {
        Matrix h = x;
        if (caches) caches->clear();
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            LayerCache cache;
            forward_layer(k, h, mode, cache);
            h = cache.y;
            if (k + 1 < layers_.size()) h = apply_activation(h, block_.act);
            if (caches) caches->push_back(std::move(cache));
        }
        return h;
    }

    void forward_layer(std::size_t k, const Matrix& x, ForwardMode mode, LayerCache& cache) {
        const LinearLayer& layer = block_.layers[k];
        LayerState& st = layers_[k];
        cache.x_in = x;
        cache.w_base = rebuild_weight(st);

        SmoothedLayer sm = apply_smooth(x, cache.w_base, layer.bias, st.smooth);
        cache.x_t = std::move(sm.x_t);
        cache.w_t = std::move(sm.w_t);
        cache.b_t = std::move(sm.b_t);

        if (mode == ForwardMode::Quantized) {
            FakeQuantResult fq = fake_quant(cache.w_t, cfg_.weight_quant(), st.clip);
            cache.w_q = std::move(fq.value);
            cache.w_mask = std::move(fq.mask);
            cache.w_mn = fq.params.min_val;
            cache.w_mx = fq.params.max_val;
            cache.w_degen = fq.params.degenerate;
            cache.wp = std::move(fq.params);
        } else {
            surrogate_weight(st, cache);
        }

        if (cfg_.bits_a > 0) {
            if (mode == ForwardMode::Quantized) {
                QuantConfig acfg;
                acfg.bits = cfg_.bits_a;
                acfg.gran = Granularity::PerTensor;
                FakeQuantResult fa = fake_quant(cache.x_t, acfg);
                cache.x_q = std::move(fa.value);
                cache.x_mask = std::move(fa.mask.on);
            } else {
                surrogate_activation(st, cache);
            }
        } else {
            cache.x_q = cache.x_t;
        }

        Matrix y = matmul(cache.x_q, cache.w_q);
        for (std::size_t i = 0; i < y.rows; ++i) {
            for (std::size_t j = 0; j < y.cols; ++j) y.at(i, j) += cache.b_t[j];
        }
        cache.y = std::move(y);
    }

    void surrogate_weight(const LayerState& st, LayerCache& cache) const {
        const GroupMap map = GroupMap::make(cache.w_t.rows, cache.w_t.cols, cfg_.weight_quant());
        st.clip.require_size(map.count);
        std::vector<double> mn;
        std::vector<double> mx;
        if (st.frozen_valid) {
            mn = st.frozen_min;
            mx = st.frozen_max;
        } else {
            mn.assign(map.count, std::numeric_limits<double>::infinity());
            mx.assign(map.count, -std::numeric_limits<double>::infinity());
            for (std::size_t i = 0; i < cache.w_t.rows; ++i) {
                for (std::size_t j = 0; j < cache.w_t.cols; ++j) {
                    const std::size_t g = map.group_of(i, j);
                    mn[g] = std::min(mn[g], cache.w_t.at(i, j));
                    mx[g] = std::max(mx[g], cache.w_t.at(i, j));
                }
            }
        }
        cache.w_mn = mn;
        cache.w_mx = mx;
        cache.w_degen.assign(map.count, 0);
        cache.w_q = Matrix(cache.w_t.rows, cache.w_t.cols);
        cache.w_mask.rows = cache.w_t.rows;
        cache.w_mask.cols = cache.w_t.cols;
        cache.w_mask.on.assign(cache.w_t.size(), 0);
        for (std::size_t i = 0; i < cache.w_t.rows; ++i) {
            for (std::size_t j = 0; j < cache.w_t.cols; ++j) {
                const std::size_t g = map.group_of(i, j);
                const double cl = sigmoid(st.clip.beta_logit[g]) * mn[g];
                const double ch = sigmoid(st.clip.gamma_logit[g]) * mx[g];
                const double lo = std::min(cl, ch);
                const double hi = std::max(cl, ch);
                const double w = cache.w_t.at(i, j);
                cache.w_q.at(i, j) = std::clamp(w, lo, hi);
                cache.w_mask.on[i * cache.w_t.cols + j] = (w >= lo && w <= hi) ? 1 : 0;
            }
        }
    }

    void surrogate_activation(const LayerState& st, LayerCache& cache) const {
        double lo;
        double hi;
        if (st.frozen_valid) {
            lo = st.act_lo;
            hi = st.act_hi;
        } else {
            const auto [mn, mx] = std::minmax_element(cache.x_t.data.begin(), cache.x_t.data.end());
            lo = *mn;
            hi = *mx;
        }
        cache.x_q = Matrix(cache.x_t.rows, cache.x_t.cols);
        cache.x_mask.assign(cache.x_t.size(), 0);
        for (std::size_t i = 0; i < cache.x_t.data.size(); ++i) {
            const double v = cache.x_t.data[i];
            cache.x_q.data[i] = std::clamp(v, lo, hi);
            cache.x_mask[i] = (v >= lo && v <= hi) ? 1 : 0;
        }
    }

    std::pair<double, GradPair> loss_and_grads_rows(const Matrix& xb, const Matrix& tb,
                                                    ForwardMode mode) {
        std::vector<LayerCache> caches;
        const Matrix out = forward(xb, mode, &caches);
        const double loss_value = mean_squared_diff(out, tb);

        GradPair grads;
        grads.band.assign(band_param_count(), 0.0);
        grads.aux.assign(aux_param_count(), 0.0);

        // dL/dy for the last layer under mean squared error.
        const double inv_n = 1.0 / static_cast<double>(out.size());
        Matrix g_y = sub(out, tb);
        for (double& v : g_y.data) v *= 2.0 * inv_n;

        std::size_t band_pos = grads.band.size();
        std::size_t aux_pos = grads.aux.size();
        for (std::size_t k = layers_.size(); k-- > 0;) {
            const LayerState& st = layers_[k];
            const LayerCache& cache = caches[k];

            if (k + 1 < layers_.size()) {
                // g_y currently holds dL/d(act input) of layer k+1's input,
                // i.e. dL/d(activation output); fold in the nonlinearity.
                for (std::size_t i = 0; i < g_y.data.size(); ++i) {
                    g_y.data[i] *= act_grad(block_.act, cache.y.data[i]);
                }
            }

            LayerGrads lg = backward_layer(st, cache, g_y);

            band_pos -= st.inc.values.size();
            std::copy(lg.band.data.begin(), lg.band.data.end(),
                      grads.band.begin() + static_cast<std::ptrdiff_t>(band_pos));
            const std::size_t aux_len = st.smooth.size() * 2 + st.clip.size() * 2;
            aux_pos -= aux_len;
            std::size_t p = aux_pos;
            auto put = [&](const std::vector<double>& src) {
                std::copy(src.begin(), src.end(),
                          grads.aux.begin() + static_cast<std::ptrdiff_t>(p));
                p += src.size();
            };
            put(lg.log_scale);
            put(lg.shift);
            put(lg.gamma_logit);
            put(lg.beta_logit);

            g_y = std::move(lg.x_in);
        }
        return {loss_value, grads};
    }

    struct LayerGrads {
        Matrix band;
        std::vector<double> log_scale;
        std::vector<double> shift;
        std::vector<double> gamma_logit;
        std::vector<double> beta_logit;
        Matrix x_in;
    };

    LayerGrads backward_layer(const LayerState& st, const LayerCache& cache, const Matrix& g_y) {
        const std::size_t in = cache.w_t.rows;
        const std::size_t out = cache.w_t.cols;
        const std::size_t rows = cache.x_t.rows;
        const GroupMap map = GroupMap::make(in, out, cfg_.weight_quant());

        LayerGrads lg;
        lg.log_scale.assign(st.smooth.size(), 0.0);
        lg.shift.assign(st.smooth.size(), 0.0);
        lg.gamma_logit.assign(st.clip.size(), 0.0);
        lg.beta_logit.assign(st.clip.size(), 0.0);

        // Bias path.
        std::vector<double> g_bt(out, 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < out; ++j) g_bt[j] += g_y.at(i, j);
        }

        // Matmul adjoints.
        Matrix g_xq = matmul(g_y, cache.w_q.transposed());
        Matrix g_wq = matmul(cache.x_q.transposed(), g_y);

        // Straight-through weight rule plus clip-boundary terms.
        Matrix g_wt(in, out);
        for (std::size_t c = 0; c < in; ++c) {
            for (std::size_t j = 0; j < out; ++j) {
                const std::size_t g = map.group_of(c, j);
                const double gw = g_wq.at(c, j);
                if (!cache.w_degen.empty() && cache.w_degen[g]) continue;
                if (cache.w_mask.at(c, j)) {
                    g_wt.at(c, j) = gw;
                } else {
                    const double cl = sigmoid(st.clip.beta_logit[g]) * cache.w_mn[g];
                    const double ch = sigmoid(st.clip.gamma_logit[g]) * cache.w_mx[g];
                    if (cache.w_t.at(c, j) > std::max(cl, ch)) {
                        lg.gamma_logit[g] +=
                            sigmoid_grad(st.clip.gamma_logit[g]) * cache.w_mx[g] * gw;
                    } else {
                        lg.beta_logit[g] +=
                            sigmoid_grad(st.clip.beta_logit[g]) * cache.w_mn[g] * gw;
                    }
                }
            }
        }

        // Activation quantizer pass-through.
        Matrix g_xt = std::move(g_xq);
        if (!cache.x_mask.empty()) {
            for (std::size_t i = 0; i < g_xt.data.size(); ++i) {
                if (!cache.x_mask[i]) g_xt.data[i] = 0.0;
            }
        }

        // Smooth transform adjoints. With s = exp(log_scale):
        //   w_t = s (.) w_base       -> dL/ds via w rows
        //   x_t = (x - shift) / s    -> dL/ds via x columns, dL/dshift
        //   b_t = b + shift . w_base -> dL/dshift, dL/dw_base
        Matrix g_wbase(in, out);
        Matrix g_x(rows, in);
        for (std::size_t c = 0; c < in; ++c) {
            const double s = st.smooth.scale_at(c);
            double acc_w = 0.0;
            for (std::size_t j = 0; j < out; ++j) {
                acc_w += g_wt.at(c, j) * cache.w_t.at(c, j);
                g_wbase.at(c, j) = s * g_wt.at(c, j) + st.smooth.shift[c] * g_bt[j];
            }
            double acc_x = 0.0;
            double acc_shift = 0.0;
            for (std::size_t i = 0; i < rows; ++i) {
                acc_x += g_xt.at(i, c) * cache.x_t.at(i, c);
                acc_shift += g_xt.at(i, c);
                g_x.at(i, c) = g_xt.at(i, c) / s;
            }
            lg.log_scale[c] = acc_w - acc_x;
            double acc_b = 0.0;
            for (std::size_t j = 0; j < out; ++j) acc_b += g_bt[j] * cache.w_base.at(c, j);
            lg.shift[c] = -acc_shift / s + acc_b;
        }

        const Matrix g_rec = st.transposed ? g_wbase.transposed() : g_wbase;
        lg.band = grad_band(g_rec, st.factors.u, st.factors.v, st.n_diag);
        lg.x_in = std::move(g_x);
        return lg;
    }

    Block block_;
    TrainConfig cfg_;
    Matrix x_pool_;
    Matrix target_pool_;
    std::vector<LayerState> layers_;
};

struct LayerCalibResult {
    QuantizedLayer layer;
    CalibRecord record;
};

inline LayerCalibResult calibrate_layer(const LinearLayer& layer, const Matrix& x,
                                        const TrainConfig& cfg) {
    Block blk;
    blk.layers.push_back(layer);
    blk.act = Nonlinearity::None;
    BlockCalibrator cal(blk, x, cfg);
    LayerCalibResult result;
    result.record = cal.train();
    result.layer = cal.export_block().layers.front();
    return result;
}

struct BlockCalibResult {
    QuantizedBlock block;
    CalibRecord record;
};

inline BlockCalibResult calibrate_block(const Block& block, const Matrix& x,
                                        const TrainConfig& cfg) {
    BlockCalibrator cal(block, x, cfg);
    BlockCalibResult result;
    result.record = cal.train();
    result.block = cal.export_block();
    return result;
}

struct ModelCalibResult {
    QuantizedModel model;
    std::vector<CalibRecord> records;
};

// Blocks are calibrated in order; the inputs of block k+1 are the quantized
// outputs of the already-calibrated block k, and each block's training target
// is its full-precision output on those propagated inputs.
inline ModelCalibResult calibrate_model(const Model& model, const std::vector<Matrix>& calib,
                                        const TrainConfig& cfg) {
    model.validate();
    if (calib.empty()) {
        throw InvalidInputError("calibration requires at least one data batch");
    }
    std::size_t total_rows = 0;
    for (const Matrix& b : calib) {
        if (b.cols != model.in_dim()) {
            throw ShapeError("calibration batch " + b.shape_str() +
                             " does not match model input dim " +
                             std::to_string(model.in_dim()));
        }
        total_rows += b.rows;
    }
    Matrix pool(total_rows, model.in_dim());
    std::size_t row = 0;
    for (const Matrix& b : calib) {
        std::copy(b.data.begin(), b.data.end(),
                  pool.data.begin() + static_cast<std::ptrdiff_t>(row * pool.cols));
        row += b.rows;
    }

    ModelCalibResult result;
    Matrix x = std::move(pool);
    for (std::size_t k = 0; k < model.blocks.size(); ++k) {
        try {
            BlockCalibrator cal(model.blocks[k], x, cfg);
            result.records.push_back(cal.train());
            result.model.blocks.push_back(cal.export_block());
        } catch (const std::runtime_error& err) {
            throw NumericalError("block " + std::to_string(k) + ": " + err.what(), k);
        }
        x = quantized_block_forward(result.model.blocks.back(), x);
    }
    return result;
}

}  // namespace dsvq
