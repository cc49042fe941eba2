#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "sdfn/tensor.hpp"

namespace sdfn {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// for every element of every tensor in `wrt`. Per-element error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> wrt, double h = 1e-5) {
    if (!(h > 0.0)) throw ConfigError("grad_check: step must be positive");
    for (auto& t : wrt) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    const Tensor loss = loss_fn();
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: non-finite loss");
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (auto& t : wrt) analytic.emplace_back(t.grad().begin(), t.grad().end());

    GradCheckResult result;
    NoGradGuard no_grad;
    for (std::size_t k = 0; k < wrt.size(); ++k) {
        auto values = wrt[k].data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            const double up = loss_fn().item();
            values[i] = saved - h;
            const double down = loss_fn().item();
            values[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("grad_check: non-finite perturbed loss");
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[k][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
            ++result.checked;
        }
    }
    return result;
}

}  // namespace sdfn
