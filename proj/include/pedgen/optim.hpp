#pragma once

#include <cmath>
#include <utility>

#include "pedgen/tape.hpp"

namespace pedgen {

// Runs `graph` on a fresh tape with the given parameters as differentiable
// leaves, backpropagates, and returns the scalar loss together with exact
// reverse-mode gradients for every parameter.
template <typename Real, typename GraphFn>
std::pair<Real, ParamMap<Real>> evaluate_with_gradients(GraphFn&& graph,
                                                        const ParamMap<Real>& params) {
    GradientTape<Real> tape;
    ParamLeaves<Real> leaves = make_param_leaves(tape, params);
    TapeNode<Real> loss = graph(tape, leaves);
    require_shape(loss.value().numel() == 1, "evaluate_with_gradients: loss must be scalar");
    require_finite(static_cast<double>(loss.value()[0]), "loss");
    tape.backward(loss);
    ParamMap<Real> grads;
    for (const auto& [name, node] : leaves) {
        Tensor<Real> g = tape.grad(node);
        if (!g.all_finite()) throw NumericError("non-finite gradient for parameter " + name);
        grads.emplace(name, std::move(g));
    }
    return {loss.value()[0], std::move(grads)};
}

template <typename Real>
double global_l2_norm(const ParamMap<Real>& grads) {
    double acc = 0;
    for (const auto& [name, g] : grads) {
        (void)name;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double v = static_cast<double>(g[i]);
            acc += v * v;
        }
    }
    return std::sqrt(acc);
}

// Rescales the whole gradient set so its global L2 norm does not exceed
// max_norm. Direction is preserved; inputs already within the bound are
// returned unchanged, which also makes the operation idempotent.
template <typename Real>
ParamMap<Real> clip_gradients(const ParamMap<Real>& grads, double max_norm) {
    require(max_norm > 0, "clip_gradients: max_norm must be positive");
    for (const auto& [name, g] : grads) {
        if (!g.all_finite()) throw NumericError("clip_gradients: non-finite gradient for " + name);
    }
    const double norm = global_l2_norm(grads);
    if (norm <= max_norm) return grads;
    const Real scale = static_cast<Real>(max_norm / norm);
    ParamMap<Real> out;
    for (const auto& [name, g] : grads) {
        Tensor<Real> h = g;
        for (std::size_t i = 0; i < h.numel(); ++i) h[i] *= scale;
        out.emplace(name, std::move(h));
    }
    return out;
}

// Adam with decoupled weight decay and a stepwise learning-rate decay
// (factor applied once per fixed epoch interval).
template <typename Real>
struct AdamState {
    ParamMap<Real> m;
    ParamMap<Real> v;
    long step = 0;
    int epoch = 0;

    double lr = 4e-4;
    double weight_decay = 1e-7;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double decay_factor = 0.9;
    int decay_interval_epochs = 75;

    double current_lr() const {
        const int k = decay_interval_epochs > 0 ? epoch / decay_interval_epochs : 0;
        return lr * std::pow(decay_factor, k);
    }
};

template <typename Real>
ParamMap<Real> adam_step(const ParamMap<Real>& params, const ParamMap<Real>& grads,
                         AdamState<Real>& state) {
    if (state.m.empty()) {
        for (const auto& [name, p] : params) {
            state.m.emplace(name, Tensor<Real>::zeros(p.shape()));
            state.v.emplace(name, Tensor<Real>::zeros(p.shape()));
        }
    }
    ++state.step;
    const double lr_t = state.current_lr();
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    ParamMap<Real> out;
    for (const auto& [name, p] : params) {
        auto git = grads.find(name);
        require_shape(git != grads.end(), "adam_step: missing gradient for " + name);
        const Tensor<Real>& g = git->second;
        require_shape(g.same_shape(p), "adam_step: gradient shape mismatch for " + name);
        Tensor<Real>& m = state.m.at(name);
        Tensor<Real>& v = state.v.at(name);
        Tensor<Real> q = p;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * gi;
            const double vi = state.beta2 * static_cast<double>(v[i]) + (1.0 - state.beta2) * gi * gi;
            m[i] = static_cast<Real>(mi);
            v[i] = static_cast<Real>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            const double upd = mhat / (std::sqrt(vhat) + state.eps) +
                               state.weight_decay * static_cast<double>(p[i]);
            q[i] = static_cast<Real>(static_cast<double>(p[i]) - lr_t * upd);
        }
        if (!q.all_finite()) throw NumericError("adam_step: non-finite parameter " + name);
        out.emplace(name, std::move(q));
    }
    return out;
}

}  // namespace pedgen
