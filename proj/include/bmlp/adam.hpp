#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "bmlp/tensor.hpp"

namespace bmlp {

/// First/second moment buffers for one parameter tensor.
template <class T>
struct AdamStateT {
    TensorT<T> m;
    TensorT<T> v;
    std::uint64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void reset(std::size_t rows, std::size_t cols) {
        m = TensorT<T>(rows, cols);
        v = TensorT<T>(rows, cols);
        t = 0;
    }
};

using AdamState = AdamStateT<double>;

/// Bias-corrected Adam update with plain L2 weight decay folded into the
/// gradient before the moment update. Throws on non-finite gradients, naming
/// the parameter and the step.
template <class T>
void adam_step(TensorT<T>& param, const TensorT<T>& grad, AdamStateT<T>& state, double lr, double weight_decay,
               const std::string& name = "param") {
    param.require_same_shape(grad, "adam_step");
    if (state.m.numel() != param.numel()) state.reset(param.rows(), param.cols());
    if (!grad.all_finite())
        throw NumericError(detail::cat("adam_step: non-finite gradient for '", name, "' at step ", state.t + 1));
    state.t += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < param.numel(); ++i) {
        const double g = static_cast<double>(grad[i]) + weight_decay * static_cast<double>(param[i]);
        const double m = b1 * static_cast<double>(state.m[i]) + (1.0 - b1) * g;
        const double v = b2 * static_cast<double>(state.v[i]) + (1.0 - b2) * g * g;
        state.m[i] = static_cast<T>(m);
        state.v[i] = static_cast<T>(v);
        const double mhat = m / corr1;
        const double vhat = v / corr2;
        param[i] = static_cast<T>(static_cast<double>(param[i]) - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
}

/// One trainable tensor: value, gradient accumulator and optimizer state,
/// kept side by side so weight structs stay self-describing.
template <class T>
struct ParamT {
    TensorT<T> value;
    TensorT<T> grad;
    AdamStateT<T> state;

    ParamT() = default;
    explicit ParamT(TensorT<T> v) : value(std::move(v)) { reset_buffers(); }

    void reset_buffers() {
        grad = TensorT<T>(value.rows(), value.cols());
        state.reset(value.rows(), value.cols());
    }

    void zero_grad() { grad.set_zero(); }

    void step(double lr, double weight_decay, const std::string& name) {
        adam_step(value, grad, state, lr, weight_decay, name);
    }

    std::size_t numel() const { return value.numel(); }
};

using Param = ParamT<double>;

} // namespace bmlp
