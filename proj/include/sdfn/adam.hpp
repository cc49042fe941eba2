#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sdfn/tensor.hpp"

namespace sdfn {

struct AdamState {
    std::uint64_t step_count = 0;
    double learning_rate = 1e-4;
    /// Inverse-time decay: the rate used at update t is learning_rate / (1 + decay * t).
    double decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;

    double effective_rate() const { return learning_rate / (1.0 + decay * static_cast<double>(step_count)); }
};

/// One Adam update with bias correction. `grads[i]` pairs with `params[i]`;
/// moments are allocated on the first step.
inline void adam_step(std::span<std::span<double>> params, std::span<const std::span<const double>> grads, AdamState& state) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
    if (state.step_count == 0 && state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.size(), 0.0);
            state.second_moment.emplace_back(p.size(), 0.0);
        }
    }
    if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: optimizer state tracks a different parameter set");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != grads[i].size() || state.first_moment[i].size() != params[i].size())
            throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));
        for (double g : grads[i])
            if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient for parameter " + std::to_string(i));
    }
    const double lr = state.effective_rate();
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        for (std::size_t j = 0; j < params[i].size(); ++j) {
            const double g = grads[i][j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            params[i][j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

/// Convenience overload: updates tensors in place from their accumulated gradients.
inline void adam_step(std::span<Tensor> params, AdamState& state) {
    std::vector<std::span<double>> p;
    std::vector<std::span<const double>> g;
    for (auto& t : params) {
        p.push_back(t.data());
        g.push_back(t.grad());
    }
    adam_step(p, g, state);
}

/// Divides the learning rate by `factor` after `patience` consecutive epochs
/// without a decrease of the monitored loss.
class PlateauScheduler {
public:
    PlateauScheduler(int patience, double factor) : patience_(patience), factor_(factor) {}

    /// Returns true when this observation triggers a reduction.
    bool observe(double loss, AdamState& state) {
        if (loss < best_) {
            best_ = loss;
            wait_ = 0;
            return false;
        }
        if (++wait_ >= patience_) {
            state.learning_rate /= factor_;
            wait_ = 0;
            return true;
        }
        return false;
    }

private:
    int patience_;
    double factor_;
    double best_ = std::numeric_limits<double>::infinity();
    int wait_ = 0;
};

}  // namespace sdfn
