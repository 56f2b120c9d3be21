#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dsvq/common.hpp"

namespace dsvq {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;

    void validate() const {
        if (!(lr > 0.0)) throw InvalidInputError("learning rate must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
            throw InvalidInputError("betas must lie in [0, 1)");
        }
        if (!(epsilon > 0.0)) throw InvalidInputError("epsilon must be positive");
        if (weight_decay < 0.0) throw InvalidInputError("weight decay must be nonnegative");
    }
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// One decoupled-weight-decay Adam update with bias correction. The decay term
// is kept out of the moment estimates; with weight_decay = 0 this is plain
// Adam.
inline void adamw_step(std::vector<double>& params, const std::vector<double>& grads,
                       AdamState& state, const AdamConfig& cfg) {
    cfg.validate();
    if (params.size() != grads.size() || state.m.size() != params.size() ||
        state.v.size() != params.size()) {
        throw ShapeError("optimizer buffers disagree: params " + std::to_string(params.size()) +
                         ", grads " + std::to_string(grads.size()) + ", state " +
                         std::to_string(state.m.size()));
    }
    for (double g : grads) {
        if (!std::isfinite(g)) {
            throw NumericalError("non-finite gradient at optimizer step " +
                                     std::to_string(state.t + 1),
                                 state.t + 1);
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.epsilon) +
                               cfg.weight_decay * params[i]);
    }
}

}  // namespace dsvq
