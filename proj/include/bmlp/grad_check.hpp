#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "bmlp/adam.hpp"
#include "bmlp/rng.hpp"

namespace bmlp {

/// Named view of one trainable tensor plus its analytic gradient. The
/// gradient checker and the optimizer loop both walk these.
template <class T>
struct ParamRef {
    std::string name;
    ParamT<T>* param;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Central-difference gradient verification. `loss_fn` must recompute the
/// full forward pass from the current parameter values and be deterministic
/// (fixed data, dropout disabled or replayed from a fixed stream). Analytic
/// gradients are read from each parameter's grad buffer, so run backward
/// once before calling. Samples `samples_per_tensor` coordinates per tensor
/// (all of them when the tensor is small) and returns the max relative error
/// |a - n| / max(|a|, |n|, 1e-8).
template <class T>
GradCheckReport grad_check(const std::function<double()>& loss_fn, const std::vector<ParamRef<T>>& params,
                           double eps, std::size_t samples_per_tensor, RngStream rng) {
    GradCheckReport report;
    for (const auto& ref : params) {
        TensorT<T>& value = ref.param->value;
        const TensorT<T>& grad = ref.param->grad;
        const std::size_t n = value.numel();
        if (n == 0) continue;
        std::vector<std::size_t> coords;
        if (n <= samples_per_tensor) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            coords.reserve(samples_per_tensor);
            for (std::size_t s = 0; s < samples_per_tensor; ++s) coords.push_back(rng.below(n));
        }
        for (std::size_t idx : coords) {
            const T saved = value[idx];
            value[idx] = saved + static_cast<T>(eps);
            const double f_plus = loss_fn();
            value[idx] = saved - static_cast<T>(eps);
            const double f_minus = loss_fn();
            value[idx] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * eps);
            const double analytic = static_cast<double>(grad[idx]);
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            const double rel = std::abs(analytic - numeric) / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = ref.name;
                report.worst_index = idx;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

} // namespace bmlp
