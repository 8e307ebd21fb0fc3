#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sftik/rng.hpp"
#include "sftik/tensor.hpp"

namespace sftik {

struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t coords_checked = 0;
    std::string worst;
};

// Compares tape gradients of a scalar-valued function against central finite
// differences. The function is called with no arguments and must read the
// parameter tensors by reference; it is evaluated under a tape once for the
// analytic pass and twice per sampled coordinate for the numeric pass. Double
// precision only: single-precision differences are too noisy for tight bounds.
template <class LossFn>
GradCheckReport check_gradients(LossFn&& f, const std::vector<Tensor<double>>& params, double eps = 1e-5,
                                int64_t max_coords_per_tensor = 256, uint64_t seed = 0x5eed) {
    for (Tensor<double> p : params) {  // shallow copies share storage
        p.set_requires_grad(true);
    }

    auto eval = [&]() -> double {
        Tensor<double> out = f();
        if (!out.valid() || !out.is_scalar()) {
            throw ContractError("check_gradients: function must return a scalar tensor");
        }
        return out.item();
    };

    // A function that is not a pure map of the parameters cannot be checked.
    double probe1 = eval();
    double probe2 = eval();
    if (std::memcmp(&probe1, &probe2, sizeof(double)) != 0) {
        throw ContractError("check_gradients: function is not deterministic (" + std::to_string(probe1) +
                            " vs " + std::to_string(probe2) + " on repeated evaluation)");
    }

    Tape<double> tape;
    std::vector<std::vector<double>> analytic(params.size());
    {
        Tape<double>::Scope scope(tape);
        Tensor<double> loss = f();
        MapGradSink<double> sink;
        tape.backward(loss, 1.0, sink);
        for (size_t i = 0; i < params.size(); ++i) {
            std::span<const double> g = sink.find(params[i]);
            analytic[i].assign(static_cast<size_t>(params[i].numel()), 0.0);
            if (!g.empty()) std::copy(g.begin(), g.end(), analytic[i].begin());
        }
    }

    GradCheckReport report;
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<double> p = params[i];
        const int64_t n = p.numel();
        std::vector<int64_t> coords(static_cast<size_t>(n));
        std::iota(coords.begin(), coords.end(), 0);
        if (n > max_coords_per_tensor) {
            Rng rng(detail::mix_seed(seed, i));
            rng.shuffle(coords);
            coords.resize(static_cast<size_t>(max_coords_per_tensor));
        }
        auto vals = p.mutable_data();
        for (int64_t c : coords) {
            const double saved = vals[c];
            vals[c] = saved + eps;
            const double lp = eval();
            vals[c] = saved - eps;
            const double lm = eval();
            vals[c] = saved;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double a = analytic[i][static_cast<size_t>(c)];
            // The denominator floor switches to an absolute comparison for
            // near-zero gradients. Central differences carry rounding noise of
            // about ulp(|loss|)/eps (~1e-11 for a unit-scale loss), so the
            // floor must sit well above that or noise on immaterial
            // coordinates masquerades as relative error.
            const double rel = std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
            report.coords_checked += 1;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                std::ostringstream os;
                os << "param " << i << " coord " << c << ": analytic=" << a << ", numeric=" << numeric;
                report.worst = os.str();
            }
        }
    }
    return report;
}

}  // namespace sftik
