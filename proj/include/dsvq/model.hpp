#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dsvq/common.hpp"
#include "dsvq/matrix.hpp"

namespace dsvq {

enum class Nonlinearity { None, Relu, Gelu };

inline const char* nonlinearity_name(Nonlinearity n) {
    switch (n) {
        case Nonlinearity::None: return "none";
        case Nonlinearity::Relu: return "relu";
        case Nonlinearity::Gelu: return "gelu";
    }
    return "none";
}

inline Nonlinearity parse_nonlinearity(const std::string& name) {
    if (name == "none") return Nonlinearity::None;
    if (name == "relu") return Nonlinearity::Relu;
    if (name == "gelu") return Nonlinearity::Gelu;
    throw InvalidInputError("unknown nonlinearity '" + name + "'");
}

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
}

inline double gelu_grad(double x) {
    const double phi = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
    const double dens = 0.39894228040143267794 * std::exp(-0.5 * x * x);
    return phi + x * dens;
}

inline double act_value(Nonlinearity n, double x) {
    switch (n) {
        case Nonlinearity::None: return x;
        case Nonlinearity::Relu: return x > 0.0 ? x : 0.0;
        case Nonlinearity::Gelu: return gelu(x);
    }
    return x;
}

inline double act_grad(Nonlinearity n, double x) {
    switch (n) {
        case Nonlinearity::None: return 1.0;
        case Nonlinearity::Relu: return x > 0.0 ? 1.0 : 0.0;
        case Nonlinearity::Gelu: return gelu_grad(x);
    }
    return 1.0;
}

inline Matrix apply_activation(const Matrix& x, Nonlinearity n) {
    if (n == Nonlinearity::None) return x;
    Matrix out = x;
    for (double& v : out.data) v = act_value(n, v);
    return out;
}

struct LinearLayer {
    std::string name;
    Matrix w;
    std::vector<double> bias;

    std::size_t in_dim() const { return w.rows; }
    std::size_t out_dim() const { return w.cols; }

    void validate() const {
        if (w.rows == 0 || w.cols == 0) {
            throw ShapeError("layer '" + name + "' has an empty weight matrix");
        }
        if (bias.size() != w.cols) {
            throw ShapeError("layer '" + name + "' bias length " + std::to_string(bias.size()) +
                             " does not match " + std::to_string(w.cols) + " outputs");
        }
        w.require_finite("layer '" + name + "' weights");
        for (double b : bias) {
            if (!std::isfinite(b)) {
                throw InvalidInputError("layer '" + name + "' bias contains non-finite entries");
            }
        }
    }
};

// A short chain of linear layers with the block's nonlinearity applied
// between consecutive layers (never after the last one). A single-layer block
// is purely affine.
struct Block {
    std::vector<LinearLayer> layers;
    Nonlinearity act = Nonlinearity::None;

    std::size_t in_dim() const { return layers.front().in_dim(); }
    std::size_t out_dim() const { return layers.back().out_dim(); }

    void validate() const {
        if (layers.empty()) throw ShapeError("block has no layers");
        for (const LinearLayer& l : layers) l.validate();
        for (std::size_t k = 0; k + 1 < layers.size(); ++k) {
            if (layers[k].out_dim() != layers[k + 1].in_dim()) {
                throw ShapeError("layer '" + layers[k].name + "' outputs " +
                                 std::to_string(layers[k].out_dim()) + " features but layer '" +
                                 layers[k + 1].name + "' expects " +
                                 std::to_string(layers[k + 1].in_dim()));
            }
        }
    }
};

struct Model {
    std::vector<Block> blocks;

    std::size_t in_dim() const { return blocks.front().in_dim(); }
    std::size_t out_dim() const { return blocks.back().out_dim(); }

    void validate() const {
        if (blocks.empty()) throw ShapeError("model has no blocks");
        for (const Block& b : blocks) b.validate();
        for (std::size_t k = 0; k + 1 < blocks.size(); ++k) {
            if (blocks[k].out_dim() != blocks[k + 1].in_dim()) {
                throw ShapeError("block " + std::to_string(k) + " outputs " +
                                 std::to_string(blocks[k].out_dim()) + " features but block " +
                                 std::to_string(k + 1) + " expects " +
                                 std::to_string(blocks[k + 1].in_dim()));
            }
        }
    }
};

inline Matrix layer_forward(const LinearLayer& layer, const Matrix& x) {
    if (x.cols != layer.in_dim()) {
        throw ShapeError("input " + x.shape_str() + " does not match layer '" + layer.name +
                         "' with " + std::to_string(layer.in_dim()) + " inputs");
    }
    Matrix y = matmul(x, layer.w);
    for (std::size_t i = 0; i < y.rows; ++i) {
        for (std::size_t j = 0; j < y.cols; ++j) y.at(i, j) += layer.bias[j];
    }
    return y;
}

inline Matrix block_forward(const Block& block, const Matrix& x) {
    block.validate();
    Matrix h = x;
    for (std::size_t k = 0; k < block.layers.size(); ++k) {
        h = layer_forward(block.layers[k], h);
        if (k + 1 < block.layers.size()) h = apply_activation(h, block.act);
    }
    return h;
}

inline Matrix model_forward(const Model& model, const Matrix& x) {
    model.validate();
    Matrix h = x;
    for (const Block& b : model.blocks) h = block_forward(b, h);
    return h;
}

}  // namespace dsvq
