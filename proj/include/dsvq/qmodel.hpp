#pragma once

#include <string>
#include <vector>

#include "dsvq/matrix.hpp"
#include "dsvq/model.hpp"
#include "dsvq/quant.hpp"
#include "dsvq/smooth.hpp"

namespace dsvq {

// Frozen deployable form of one calibrated layer: integer codes plus the
// parameters to decode them, the channel transform for incoming activations,
// and the transformed bias. The stored codes already include any band
// correction applied to the weight before quantization.
struct QuantizedLayer {
    std::string name;
    IntCodes codes;
    QuantParams params;
    SmoothParams smooth;
    std::vector<double> bias_t;
    int act_bits = 0;

    std::size_t in_dim() const { return codes.rows; }
    std::size_t out_dim() const { return codes.cols; }
};

struct QuantizedBlock {
    std::vector<QuantizedLayer> layers;
    Nonlinearity act = Nonlinearity::None;
};

struct QuantizedModel {
    std::vector<QuantizedBlock> blocks;
};

inline Matrix quantized_layer_forward(const QuantizedLayer& layer, const Matrix& x) {
    if (x.cols != layer.in_dim()) {
        throw ShapeError("input " + x.shape_str() + " does not match quantized layer '" +
                         layer.name + "' with " + std::to_string(layer.in_dim()) + " inputs");
    }
    layer.smooth.require_size(x.cols);
    Matrix x_t(x.rows, x.cols);
    for (std::size_t c = 0; c < x.cols; ++c) {
        const double s = layer.smooth.scale_at(c);
        const double d = layer.smooth.shift[c];
        for (std::size_t i = 0; i < x.rows; ++i) {
            x_t.at(i, c) = (x.at(i, c) - d) / s;
        }
    }
    if (layer.act_bits > 0) {
        QuantConfig acfg;
        acfg.bits = layer.act_bits;
        acfg.gran = Granularity::PerTensor;
        x_t = fake_quant(x_t, acfg).value;
    }
    Matrix y = matmul(x_t, dequantize(layer.codes, layer.params));
    for (std::size_t i = 0; i < y.rows; ++i) {
        for (std::size_t j = 0; j < y.cols; ++j) y.at(i, j) += layer.bias_t[j];
    }
    return y;
}

inline Matrix quantized_block_forward(const QuantizedBlock& block, const Matrix& x) {
    Matrix h = x;
    for (std::size_t k = 0; k < block.layers.size(); ++k) {
        h = quantized_layer_forward(block.layers[k], h);
        if (k + 1 < block.layers.size()) h = apply_activation(h, block.act);
    }
    return h;
}

inline Matrix quantized_model_forward(const QuantizedModel& model, const Matrix& x) {
    Matrix h = x;
    for (const QuantizedBlock& b : model.blocks) h = quantized_block_forward(b, h);
    return h;
}

}  // namespace dsvq
