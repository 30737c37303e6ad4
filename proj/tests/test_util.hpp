#pragma once

// Shared helpers for the test suites. The finite-difference oracle here is
// deliberately independent of the tape's backward pass: it only ever runs
// forward evaluations.

#include <cmath>
#include <string>

#include "pedgen/optim.hpp"
#include "pedgen/rng.hpp"
#include "pedgen/tape.hpp"

namespace pedgen::testutil {

template <typename Fn>
double eval_loss(Fn&& graph, const ParamMap<double>& params) {
    GradientTape<double> tape;
    ParamLeaves<double> leaves = make_param_leaves(tape, params);
    return graph(tape, leaves).value()[0];
}

// Central finite difference of the loss w.r.t. params[name][flat_index].
template <typename Fn>
double fd_grad(Fn&& graph, ParamMap<double> params, const std::string& name,
               std::size_t flat_index, double eps = 1e-5) {
    params.at(name)[flat_index] += eps;
    const double lp = eval_loss(graph, params);
    params.at(name)[flat_index] -= 2 * eps;
    const double lm = eval_loss(graph, params);
    return (lp - lm) / (2 * eps);
}

struct GradCheckResult {
    double worst_rel = 0;
    std::string worst_name;
    std::size_t worst_index = 0;
    double analytic = 0, numeric = 0;
    int checked = 0;
};

// Compares analytic gradients against central differences on a random sample
// of coordinates per parameter. Relative error uses an absolute floor so
// near-zero gradients do not blow the ratio up.
template <typename Fn>
GradCheckResult check_gradients(Fn&& graph, const ParamMap<double>& params, RngStream rng,
                                int coords_per_param = 8, double eps = 1e-5,
                                double abs_floor = 1e-6) {
    auto [loss, grads] = evaluate_with_gradients(graph, params);
    (void)loss;
    GradCheckResult res;
    for (const auto& [name, g] : grads) {
        const std::size_t n = g.numel();
        if (n == 0) continue;
        const int tries = std::min<int>(coords_per_param, static_cast<int>(n));
        for (int t = 0; t < tries; ++t) {
            const std::size_t i =
                (n <= static_cast<std::size_t>(coords_per_param)) ? static_cast<std::size_t>(t)
                                                                  : rng.below(n);
            const double num = fd_grad(graph, params, name, i, eps);
            const double ana = g[i];
            const double denom = std::max({std::abs(num), std::abs(ana), abs_floor});
            const double rel = std::abs(num - ana) / denom;
            ++res.checked;
            if (rel > res.worst_rel) {
                res.worst_rel = rel;
                res.worst_name = name;
                res.worst_index = i;
                res.analytic = ana;
                res.numeric = num;
            }
        }
    }
    return res;
}

}  // namespace pedgen::testutil
