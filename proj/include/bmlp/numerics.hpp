#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "bmlp/tensor.hpp"

namespace bmlp {

// ---------------------------------------------------------------------------
// Dense layer
// ---------------------------------------------------------------------------

/// Y = X * W (+ bias broadcast over rows). X is n x a, W is a x b,
/// bias (optional) is 1 x b.
template <class T>
TensorT<T> dense(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias = nullptr) {
    if (x.cols() != w.rows())
        throw DimensionError(detail::cat("dense: inner dimensions disagree ", x.shape_str(), " vs ", w.shape_str()));
    if (bias && (bias->rows() != 1 || bias->cols() != w.cols()))
        throw DimensionError(detail::cat("dense: bias shape ", bias->shape_str(), " does not match output width ",
                                         w.cols()));
    const std::size_t n = x.rows(), a = x.cols(), b = w.cols();
    TensorT<T> y(n, b);
    for (std::size_t i = 0; i < n; ++i) {
        const T* xi = x.row_ptr(i);
        T* yi = y.row_ptr(i);
        if (bias) {
            const T* bp = bias->row_ptr(0);
            for (std::size_t j = 0; j < b; ++j) yi[j] = bp[j];
        }
        for (std::size_t k = 0; k < a; ++k) {
            const T xik = xi[k];
            if (xik == T(0)) continue;
            const T* wk = w.row_ptr(k);
            for (std::size_t j = 0; j < b; ++j) yi[j] += xik * wk[j];
        }
    }
    return y;
}

/// Accumulates gradients for Y = X*W + b given dY. Any of the outputs may be
/// null when the caller does not need that gradient.
template <class T>
void dense_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy,
                    TensorT<T>* dx, TensorT<T>* dw, TensorT<T>* db) {
    const std::size_t n = x.rows(), a = x.cols(), b = w.cols();
    if (dx) {
        // dX = dY * W^T
        for (std::size_t i = 0; i < n; ++i) {
            const T* dyi = dy.row_ptr(i);
            T* dxi = dx->row_ptr(i);
            for (std::size_t k = 0; k < a; ++k) {
                const T* wk = w.row_ptr(k);
                T acc = T(0);
                for (std::size_t j = 0; j < b; ++j) acc += dyi[j] * wk[j];
                dxi[k] += acc;
            }
        }
    }
    if (dw) {
        // dW = X^T * dY
        for (std::size_t i = 0; i < n; ++i) {
            const T* xi = x.row_ptr(i);
            const T* dyi = dy.row_ptr(i);
            for (std::size_t k = 0; k < a; ++k) {
                const T xik = xi[k];
                if (xik == T(0)) continue;
                T* dwk = dw->row_ptr(k);
                for (std::size_t j = 0; j < b; ++j) dwk[j] += xik * dyi[j];
            }
        }
    }
    if (db) {
        for (std::size_t i = 0; i < n; ++i) {
            const T* dyi = dy.row_ptr(i);
            T* dbp = db->row_ptr(0);
            for (std::size_t j = 0; j < b; ++j) dbp[j] += dyi[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

/// Exact Gaussian-CDF GELU: x * Phi(x).
template <class T>
T gelu_scalar(T x) {
    const double xd = static_cast<double>(x);
    return static_cast<T>(0.5 * xd * (1.0 + std::erf(xd * M_SQRT1_2)));
}

/// d/dx [x * Phi(x)] = Phi(x) + x * phi(x).
template <class T>
T gelu_grad_scalar(T x) {
    const double xd = static_cast<double>(x);
    const double phi = std::exp(-0.5 * xd * xd) * 0.3989422804014326779; // 1/sqrt(2*pi)
    const double Phi = 0.5 * (1.0 + std::erf(xd * M_SQRT1_2));
    return static_cast<T>(Phi + xd * phi);
}

template <class T>
T sigmoid_scalar(T x) {
    const double xd = static_cast<double>(x);
    if (xd >= 0) return static_cast<T>(1.0 / (1.0 + std::exp(-xd)));
    const double e = std::exp(xd);
    return static_cast<T>(e / (1.0 + e));
}

enum class Act { gelu, sigmoid };

template <class T>
TensorT<T> activation(Act kind, const TensorT<T>& x) {
    TensorT<T> y = x;
    for (auto& v : y.data) v = kind == Act::gelu ? gelu_scalar(v) : sigmoid_scalar(v);
    return y;
}

template <class T>
TensorT<T> gelu(const TensorT<T>& x) {
    return activation(Act::gelu, x);
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    return activation(Act::sigmoid, x);
}

// ---------------------------------------------------------------------------
// Layer normalization (over the last axis, per row)
// ---------------------------------------------------------------------------

template <class T>
struct LayerNormCache {
    TensorT<T> xhat;            // standardized input
    std::vector<T> inv_std;     // 1/sqrt(var + eps) per row
};

inline constexpr double kLayerNormEps = 1e-5;

template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      LayerNormCache<T>* cache = nullptr, double eps = kLayerNormEps) {
    const std::size_t n = x.rows(), f = x.cols();
    if (gamma.cols() != f || beta.cols() != f)
        throw DimensionError(detail::cat("layer_norm: gamma/beta width must be ", f));
    TensorT<T> y(n, f);
    if (cache) {
        cache->xhat = TensorT<T>(n, f);
        cache->inv_std.assign(n, T(0));
    }
    for (std::size_t i = 0; i < n; ++i) {
        const T* xi = x.row_ptr(i);
        T mean = T(0);
        for (std::size_t j = 0; j < f; ++j) mean += xi[j];
        mean /= static_cast<T>(f);
        T var = T(0);
        for (std::size_t j = 0; j < f; ++j) {
            const T dv = xi[j] - mean;
            var += dv * dv;
        }
        var /= static_cast<T>(f);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
        T* yi = y.row_ptr(i);
        for (std::size_t j = 0; j < f; ++j) {
            const T xh = (xi[j] - mean) * inv;
            yi[j] = gamma(0, j) * xh + beta(0, j);
            if (cache) cache->xhat(i, j) = xh;
        }
        if (cache) cache->inv_std[i] = inv;
    }
    return y;
}

template <class T>
void layer_norm_backward(const TensorT<T>& dy, const LayerNormCache<T>& cache, const TensorT<T>& gamma,
                         TensorT<T>* dx, TensorT<T>* dgamma, TensorT<T>* dbeta) {
    const std::size_t n = dy.rows(), f = dy.cols();
    for (std::size_t i = 0; i < n; ++i) {
        const T* dyi = dy.row_ptr(i);
        const T* xh = cache.xhat.row_ptr(i);
        T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
        for (std::size_t j = 0; j < f; ++j) {
            const T dxhat = dyi[j] * gamma(0, j);
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xh[j];
        }
        const T inv_f = T(1) / static_cast<T>(f);
        if (dx) {
            T* dxi = dx->row_ptr(i);
            for (std::size_t j = 0; j < f; ++j) {
                const T dxhat = dyi[j] * gamma(0, j);
                dxi[j] += cache.inv_std[i] * (dxhat - sum_dxhat * inv_f - xh[j] * sum_dxhat_xhat * inv_f);
            }
        }
        if (dgamma)
            for (std::size_t j = 0; j < f; ++j) (*dgamma)(0, j) += dyi[j] * xh[j];
        if (dbeta)
            for (std::size_t j = 0; j < f; ++j) (*dbeta)(0, j) += dyi[j];
    }
}

// ---------------------------------------------------------------------------
// Softmax (max-subtracted; optional mask)
// ---------------------------------------------------------------------------

/// Softmax over a logit vector. Masked entries are excluded entirely and get
/// probability exactly 0. Throws when every entry is masked.
template <class T>
std::vector<T> softmax_masked(const std::vector<T>& logits, const std::vector<std::uint8_t>* mask = nullptr) {
    const std::size_t n = logits.size();
    std::vector<T> p(n, T(0));
    T mx = T(0);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
        if (mask && !(*mask)[i]) continue;
        if (!any || logits[i] > mx) mx = logits[i];
        any = true;
    }
    if (!any) throw InvalidInputError("softmax: every entry is masked");
    T denom = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        if (mask && !(*mask)[i]) continue;
        p[i] = std::exp(logits[i] - mx);
        denom += p[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (mask && !(*mask)[i]) continue;
        p[i] /= denom;
    }
    return p;
}

/// Gradient through softmax: ds_i = p_i * (dp_i - sum_j p_j dp_j) over the
/// unmasked entries; masked entries get 0.
template <class T>
std::vector<T> softmax_backward(const std::vector<T>& p, const std::vector<T>& dp,
                                const std::vector<std::uint8_t>* mask = nullptr) {
    const std::size_t n = p.size();
    T dot = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        if (mask && !(*mask)[i]) continue;
        dot += p[i] * dp[i];
    }
    std::vector<T> ds(n, T(0));
    for (std::size_t i = 0; i < n; ++i) {
        if (mask && !(*mask)[i]) continue;
        ds[i] = p[i] * (dp[i] - dot);
    }
    return ds;
}

template <class T>
TensorT<T> softmax_row(const TensorT<T>& logits, const std::vector<std::uint8_t>* mask = nullptr) {
    std::vector<T> v(logits.data.begin(), logits.data.end());
    std::vector<T> p = softmax_masked(v, mask);
    TensorT<T> out(logits.rows(), logits.cols());
    out.data.assign(p.begin(), p.end());
    return out;
}

// ---------------------------------------------------------------------------
// Dropout (inverted: survivors scaled at train time, eval is the identity)
// ---------------------------------------------------------------------------

enum class Mode { train, eval };

template <class T>
struct DropoutCache {
    TensorT<T> scale; // per-entry multiplier applied in the forward pass
    bool identity = true;
};

template <class T>
TensorT<T> dropout(const TensorT<T>& x, double rate, Mode mode, RngStream& rng, DropoutCache<T>* cache = nullptr) {
    if (rate < 0.0 || rate >= 1.0)
        throw InvalidInputError(detail::cat("dropout: rate must lie in [0,1), got ", rate));
    if (mode == Mode::eval || rate == 0.0) {
        if (cache) cache->identity = true;
        return x;
    }
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    TensorT<T> y(x.rows(), x.cols());
    if (cache) {
        cache->identity = false;
        cache->scale = TensorT<T>(x.rows(), x.cols());
    }
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const bool keep = rng.uniform() >= rate;
        const T s = keep ? keep_scale : T(0);
        y[i] = x[i] * s;
        if (cache) cache->scale[i] = s;
    }
    return y;
}

template <class T>
void dropout_backward(const TensorT<T>& dy, const DropoutCache<T>& cache, TensorT<T>* dx) {
    if (cache.identity) {
        dx->add_(dy);
        return;
    }
    for (std::size_t i = 0; i < dy.numel(); ++i) (*dx)[i] += dy[i] * cache.scale[i];
}

} // namespace bmlp
