#pragma once

// Finite-difference verification of analytic gradients. The builder callback
// reconstructs the graph from scratch for every probe so that perturbed
// forward passes see fresh values.

#include <functional>

#include "mrt/tensor.hpp"

namespace mrt {

// Relative error between an analytic and a numeric derivative; values that
// are both tiny compare as exactly equal.
inline double grad_rel_err(double analytic, double numeric) {
    const double denom = std::max(std::fabs(analytic), std::fabs(numeric));
    if (denom < 1e-10) return 0.0;
    return std::fabs(analytic - numeric) / denom;
}

// Central-difference check of d(loss)/d(x) for one input vector.
// `build` maps the current value of x to a scalar loss on a fresh graph.
// Returns the worst relative error across elements.
inline double grad_check(std::vector<double>& x,
                         const std::function<double(const std::vector<double>&, std::vector<double>*)>& build,
                         double h = 1e-6) {
    std::vector<double> analytic;
    build(x, &analytic);
    if (analytic.size() != x.size())
        throw ShapeError("grad_check: gradient size " + std::to_string(analytic.size()) +
                         " does not match input size " + std::to_string(x.size()));
    double worst = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double fp = build(x, nullptr);
        x[i] = keep - h;
        const double fm = build(x, nullptr);
        x[i] = keep;
        const double numeric = (fp - fm) / (2.0 * h);
        worst = std::max(worst, grad_rel_err(analytic[i], numeric));
    }
    return worst;
}

// Central-difference check over every element of every parameter in `store`.
// `forward` runs a full forward pass and returns the scalar loss; it must
// read parameter values from the store each call. Analytic gradients are
// taken from Param::grad after `backward` has been invoked by the caller
// inside `forward(true)`.
struct ParamGradReport {
    double worst_rel_err = 0.0;
    std::string worst_param;
    int64_t checked = 0;
};

inline ParamGradReport grad_check_params(ParamStore& store,
                                         const std::function<double(bool)>& forward,
                                         double h = 1e-6) {
    store.zero_grads();
    forward(true);  // with_grad: fills Param::grad
    std::vector<std::vector<double>> analytic(store.count());
    for (size_t p = 0; p < store.count(); ++p) analytic[p] = store[p].grad;

    ParamGradReport rep;
    for (size_t p = 0; p < store.count(); ++p) {
        auto& prm = store[p];
        for (size_t i = 0; i < prm.value.size(); ++i) {
            const double keep = prm.value[i];
            prm.value[i] = keep + h;
            const double fp = forward(false);
            prm.value[i] = keep - h;
            const double fm = forward(false);
            prm.value[i] = keep;
            const double numeric = (fp - fm) / (2.0 * h);
            const double err = grad_rel_err(analytic[p][i], numeric);
            ++rep.checked;
            if (err > rep.worst_rel_err) {
                rep.worst_rel_err = err;
                rep.worst_param = prm.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return rep;
}

}  // namespace mrt
