#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sftik/tensor.hpp"

namespace sftik {

// Warmup followed by cosine annealing. The warmup ramp starts at
// base_lr * warmup_start_ratio and reaches base_lr at warmup_steps; the
// annealing phase decays to final_lr at total_steps. Both phases are halves
// of a cosine, so the curve is continuous at the boundary.
struct LrSchedule {
    double base_lr = 2e-4;
    double final_lr = 0.0;
    int64_t warmup_steps = 50;
    double warmup_start_ratio = 0.2;
    int64_t total_steps = 0;

    double lr_at(int64_t step) const {
        if (step < 0 || step > total_steps) {
            throw ConfigError("lr_at: step " + std::to_string(step) + " outside [0, " +
                              std::to_string(total_steps) + "]");
        }
        const double pi = 3.14159265358979323846;
        if (step < warmup_steps) {
            double ramp = (1.0 - std::cos(pi * static_cast<double>(step) / static_cast<double>(warmup_steps))) / 2.0;
            return base_lr * (warmup_start_ratio + (1.0 - warmup_start_ratio) * ramp);
        }
        // A run shorter than the warmup never leaves the ramp; the annealing
        // span is empty, so the boundary value is held.
        if (total_steps <= warmup_steps) return base_lr;
        double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
        return final_lr + (base_lr - final_lr) * (1.0 + std::cos(pi * progress)) / 2.0;
    }
};

// Bias-corrected Adam. Moment buffers are parallel to the parameter list and
// are allocated on the first step. Parameters whose gradient is absent or
// identically zero are left untouched (their moments included), so an update
// with no gradients anywhere is the identity regardless of optimizer state.
template <class T>
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::vector<std::vector<T>> m, v;
};

template <class T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, double lr) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(static_cast<size_t>(params[i].numel()), T(0));
            state.v[i].assign(static_cast<size_t>(params[i].numel()), T(0));
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ShapeError("adam_step: state holds " + std::to_string(state.m.size()) + " slots for " +
                         std::to_string(params.size()) + " parameters");
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = params[i];
        if (!p.has_grad()) continue;
        auto g = p.grad();
        if (state.m[i].size() != g.size()) {
            throw ShapeError("adam_step: moment size " + std::to_string(state.m[i].size()) +
                             " vs gradient size " + std::to_string(g.size()));
        }
        bool all_zero = true;
        for (const T& gv : g) {
            if (gv != T(0)) {
                all_zero = false;
                break;
            }
        }
        if (all_zero) continue;
        auto vals = p.mutable_data();
        std::vector<T>& m = state.m[i];
        std::vector<T>& v = state.v[i];
        for (size_t j = 0; j < g.size(); ++j) {
            double gj = static_cast<double>(g[j]);
            double mj = state.beta1 * static_cast<double>(m[j]) + (1.0 - state.beta1) * gj;
            double vj = state.beta2 * static_cast<double>(v[j]) + (1.0 - state.beta2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + state.eps);
            vals[j] = static_cast<T>(static_cast<double>(vals[j]) - update);
        }
    }
}

}  // namespace sftik
