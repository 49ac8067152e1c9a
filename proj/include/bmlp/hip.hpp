#pragma once

#include <cstdint>
#include <vector>

#include "bmlp/adam.hpp"
#include "bmlp/numerics.hpp"

namespace bmlp {

// ---------------------------------------------------------------------------
// Sequence capture block (SCB): a two-layer GELU MLP mixing the position
// axis, reached by transposing the (rows x 2d) input.
// ---------------------------------------------------------------------------

template <class T>
struct ScbWeightsT {
    ParamT<T> w1;    // rows(=L or L') x hidden
    ParamT<T> w2;    // hidden x rows
    ParamT<T> gamma; // 1 x 2d, layer norm before the mixing (full-sequence block only)
    ParamT<T> beta;  // 1 x 2d

    ScbWeightsT() = default;

    ScbWeightsT(std::size_t len, std::size_t hidden, std::size_t width, RngStream& rng) {
        const double r1 = std::sqrt(6.0 / static_cast<double>(len + hidden));
        const double r2 = std::sqrt(6.0 / static_cast<double>(hidden + len));
        w1 = ParamT<T>(TensorT<T>::random_uniform(len, hidden, static_cast<T>(-r1), static_cast<T>(r1), rng));
        w2 = ParamT<T>(TensorT<T>::random_uniform(hidden, len, static_cast<T>(-r2), static_cast<T>(r2), rng));
        gamma = ParamT<T>(TensorT<T>::full(1, width, T(1)));
        beta = ParamT<T>(TensorT<T>(1, width));
    }
};

template <class T>
struct ScbCache {
    TensorT<T> x;       // block input
    LayerNormCache<T> ln;
    TensorT<T> y;       // layer-normed input
    TensorT<T> pre_act; // y^T * w1, before GELU
    TensorT<T> act;     // after GELU
};

/// x + transpose(GELU(layer_norm(x)^T * w1) * w2): position mixing with a
/// residual connection, layer norm over the feature axis first.
template <class T>
TensorT<T> scb_forward(const TensorT<T>& x, const ScbWeightsT<T>& w, ScbCache<T>* cache = nullptr) {
    if (x.rows() != w.w1.value.rows())
        throw DimensionError(detail::cat("scb_forward: input rows ", x.rows(), " vs mixing weight ",
                                         w.w1.value.shape_str()));
    LayerNormCache<T> ln_local;
    LayerNormCache<T>* ln = cache ? &cache->ln : &ln_local;
    TensorT<T> y = layer_norm(x, w.gamma.value, w.beta.value, ln);
    TensorT<T> yt = transpose(y);
    TensorT<T> pre = dense(yt, w.w1.value);
    TensorT<T> act = gelu(pre);
    TensorT<T> mixed = dense(act, w.w2.value);
    TensorT<T> out = x;
    const TensorT<T> mixed_t = transpose(mixed);
    out.add_(mixed_t);
    if (cache) {
        cache->x = x;
        cache->y = std::move(y);
        cache->pre_act = std::move(pre);
        cache->act = std::move(act);
    }
    return out;
}

/// Accumulates SCB weight gradients and adds the input gradient into dx.
template <class T>
void scb_backward(const TensorT<T>& d_out, ScbCache<T>& cache, ScbWeightsT<T>& w, TensorT<T>& dx) {
    dx.add_(d_out); // residual path

    // Mixing path: out += transpose(act * w2).
    TensorT<T> d_mixed = transpose(d_out);
    TensorT<T> d_act(cache.act.rows(), cache.act.cols());
    dense_backward(cache.act, w.w2.value, d_mixed, &d_act, &w.w2.grad, static_cast<TensorT<T>*>(nullptr));
    for (std::size_t i = 0; i < d_act.numel(); ++i) d_act[i] *= gelu_grad_scalar(cache.pre_act[i]);
    TensorT<T> d_yt(cache.y.cols(), cache.y.rows());
    dense_backward(transpose(cache.y), w.w1.value, d_act, &d_yt, &w.w1.grad, static_cast<TensorT<T>*>(nullptr));
    TensorT<T> d_y = transpose(d_yt);
    layer_norm_backward(d_y, cache.ln, w.gamma.value, &dx, &w.gamma.grad, &w.beta.grad);
}

/// SCB without layer norm or residual, as used inside the purchase-intent
/// blocks: transpose(GELU(x^T * w1) * w2).
template <class T>
TensorT<T> scb_core_forward(const TensorT<T>& x, const ScbWeightsT<T>& w, ScbCache<T>* cache = nullptr) {
    if (x.rows() != w.w1.value.rows())
        throw DimensionError(detail::cat("scb_core_forward: input rows ", x.rows(), " vs mixing weight ",
                                         w.w1.value.shape_str()));
    TensorT<T> xt = transpose(x);
    TensorT<T> pre = dense(xt, w.w1.value);
    TensorT<T> act = gelu(pre);
    TensorT<T> out = transpose(dense(act, w.w2.value));
    if (cache) {
        cache->x = x;
        cache->pre_act = std::move(pre);
        cache->act = std::move(act);
    }
    return out;
}

template <class T>
void scb_core_backward(const TensorT<T>& d_out, ScbCache<T>& cache, ScbWeightsT<T>& w, TensorT<T>& dx) {
    TensorT<T> d_mixed = transpose(d_out);
    TensorT<T> d_act(cache.act.rows(), cache.act.cols());
    dense_backward(cache.act, w.w2.value, d_mixed, &d_act, &w.w2.grad, static_cast<TensorT<T>*>(nullptr));
    for (std::size_t i = 0; i < d_act.numel(); ++i) d_act[i] *= gelu_grad_scalar(cache.pre_act[i]);
    TensorT<T> d_xt(cache.x.cols(), cache.x.rows());
    dense_backward(transpose(cache.x), w.w1.value, d_act, &d_xt, &w.w1.grad, static_cast<TensorT<T>*>(nullptr));
    dx.add_(transpose(d_xt));
}

// ---------------------------------------------------------------------------
// Feature capture block (FCB): multi-head two-layer sigmoid MLP over the
// feature axis, heads concatenated and projected.
// ---------------------------------------------------------------------------

template <class T>
struct FcbWeightsT {
    std::vector<ParamT<T>> w1; // per head: (2d/H) x d_c
    std::vector<ParamT<T>> w2; // per head: d_c x (2d/H)
    ParamT<T> w_o;             // 2d x 2d
    ParamT<T> gamma;           // 1 x 2d
    ParamT<T> beta;            // 1 x 2d

    FcbWeightsT() = default;

    FcbWeightsT(std::size_t width, std::size_t hidden, std::size_t heads, RngStream& rng) {
        if (heads == 0 || width % heads != 0)
            throw ConfigError(detail::cat("fcb: head count ", heads, " must divide feature width ", width));
        const std::size_t slice = width / heads;
        const double r1 = std::sqrt(6.0 / static_cast<double>(slice + hidden));
        const double r2 = std::sqrt(6.0 / static_cast<double>(hidden + slice));
        const double ro = std::sqrt(6.0 / static_cast<double>(2 * width));
        for (std::size_t h = 0; h < heads; ++h) {
            w1.emplace_back(TensorT<T>::random_uniform(slice, hidden, static_cast<T>(-r1), static_cast<T>(r1), rng));
            w2.emplace_back(TensorT<T>::random_uniform(hidden, slice, static_cast<T>(-r2), static_cast<T>(r2), rng));
        }
        w_o = ParamT<T>(TensorT<T>::random_uniform(width, width, static_cast<T>(-ro), static_cast<T>(ro), rng));
        gamma = ParamT<T>(TensorT<T>::full(1, width, T(1)));
        beta = ParamT<T>(TensorT<T>(1, width));
    }

    std::size_t heads() const { return w1.size(); }
};

template <class T>
struct FcbCache {
    LayerNormCache<T> ln;
    TensorT<T> y;                    // layer-normed input
    std::vector<TensorT<T>> act;     // per head, after sigmoid
    TensorT<T> concat;               // heads side by side, rows x 2d
};

/// concat_h(sigmoid(layer_norm(x)_h * w1_h) * w2_h) * w_o — the FCB transform
/// without its residual. The layer norm runs before the head split so every
/// head sees the same normalized features.
template <class T>
TensorT<T> fcb_core_forward(const TensorT<T>& x, const FcbWeightsT<T>& w, FcbCache<T>* cache = nullptr) {
    const std::size_t heads = w.heads();
    const std::size_t width = x.cols();
    if (width != w.w_o.value.rows())
        throw DimensionError(detail::cat("fcb: input width ", width, " vs projection ", w.w_o.value.shape_str()));
    const std::size_t slice = width / heads;
    FcbCache<T> local;
    FcbCache<T>* c = cache ? cache : &local;
    c->y = layer_norm(x, w.gamma.value, w.beta.value, &c->ln);
    c->act.assign(heads, TensorT<T>());
    c->concat = TensorT<T>(x.rows(), width);
    for (std::size_t h = 0; h < heads; ++h) {
        TensorT<T> yh(x.rows(), slice);
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < slice; ++j) yh(i, j) = c->y(i, h * slice + j);
        TensorT<T> pre = dense(yh, w.w1[h].value);
        TensorT<T> act = sigmoid(pre);
        TensorT<T> head = dense(act, w.w2[h].value);
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < slice; ++j) c->concat(i, h * slice + j) = head(i, j);
        c->act[h] = std::move(act);
    }
    return dense(c->concat, w.w_o.value);
}

/// Backward of fcb_core_forward; adds the input gradient into dx.
template <class T>
void fcb_core_backward(const TensorT<T>& d_core, FcbCache<T>& cache, FcbWeightsT<T>& w, TensorT<T>& dx) {
    const std::size_t heads = w.heads();
    const std::size_t width = cache.concat.cols();
    const std::size_t slice = width / heads;
    const std::size_t rows = cache.concat.rows();

    TensorT<T> d_concat(rows, width);
    dense_backward(cache.concat, w.w_o.value, d_core, &d_concat, &w.w_o.grad, static_cast<TensorT<T>*>(nullptr));

    TensorT<T> d_y(rows, width);
    for (std::size_t h = 0; h < heads; ++h) {
        TensorT<T> d_head(rows, slice);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < slice; ++j) d_head(i, j) = d_concat(i, h * slice + j);
        TensorT<T> d_act(rows, cache.act[h].cols());
        dense_backward(cache.act[h], w.w2[h].value, d_head, &d_act, &w.w2[h].grad,
                       static_cast<TensorT<T>*>(nullptr));
        for (std::size_t i = 0; i < d_act.numel(); ++i) {
            const T s = cache.act[h][i];
            d_act[i] *= s * (T(1) - s);
        }
        TensorT<T> yh(rows, slice);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < slice; ++j) yh(i, j) = cache.y(i, h * slice + j);
        TensorT<T> d_yh(rows, slice);
        dense_backward(yh, w.w1[h].value, d_act, &d_yh, &w.w1[h].grad, static_cast<TensorT<T>*>(nullptr));
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < slice; ++j) d_y(i, h * slice + j) += d_yh(i, j);
    }
    layer_norm_backward(d_y, cache.ln, w.gamma.value, &dx, &w.gamma.grad, &w.beta.grad);
}

/// x + fcb_core(x): the full-sequence FCB step with its residual.
template <class T>
TensorT<T> fcb_forward(const TensorT<T>& x, const FcbWeightsT<T>& w, FcbCache<T>* cache = nullptr) {
    TensorT<T> out = fcb_core_forward(x, w, cache);
    out.add_(x);
    return out;
}

template <class T>
void fcb_backward(const TensorT<T>& d_out, FcbCache<T>& cache, FcbWeightsT<T>& w, TensorT<T>& dx) {
    dx.add_(d_out);
    fcb_core_backward(d_out, cache, w, dx);
}

// ---------------------------------------------------------------------------
// Weighted pooling over real positions
// ---------------------------------------------------------------------------

template <class T>
struct PoolWeightsT {
    ParamT<T> w_alpha; // 2d x 1

    PoolWeightsT() = default;

    PoolWeightsT(std::size_t width, RngStream& rng) {
        const double r = std::sqrt(6.0 / static_cast<double>(width + 1));
        w_alpha = ParamT<T>(TensorT<T>::random_uniform(width, 1, static_cast<T>(-r), static_cast<T>(r), rng));
    }
};

template <class T>
struct PoolCache {
    TensorT<T> x;
    std::vector<T> alpha;
    std::vector<std::uint8_t> mask;
    DropoutCache<T> drop;
};

/// alpha = masked softmax of x * w_alpha over real positions;
/// pooled = dropout(sum_t alpha_t * x_t). Padded positions get weight
/// exactly 0. Throws when the mask covers everything.
template <class T>
TensorT<T> pool_forward(const TensorT<T>& x, const PoolWeightsT<T>& w, const std::vector<std::uint8_t>& mask,
                        double dropout_rate, Mode mode, RngStream& rng, PoolCache<T>* cache = nullptr) {
    if (mask.size() != x.rows())
        throw DimensionError(detail::cat("pool: mask length ", mask.size(), " vs ", x.rows(), " rows"));
    std::vector<T> logits(x.rows(), T(0));
    for (std::size_t t = 0; t < x.rows(); ++t) {
        const T* row = x.row_ptr(t);
        T acc = T(0);
        for (std::size_t j = 0; j < x.cols(); ++j) acc += row[j] * w.w_alpha.value(j, 0);
        logits[t] = acc;
    }
    std::vector<T> alpha;
    try {
        alpha = softmax_masked(logits, &mask);
    } catch (const InvalidInputError&) {
        throw InvalidInputError("pool: sequence has no real positions");
    }
    TensorT<T> pooled(1, x.cols());
    for (std::size_t t = 0; t < x.rows(); ++t) {
        if (!mask[t]) continue;
        const T* row = x.row_ptr(t);
        for (std::size_t j = 0; j < x.cols(); ++j) pooled(0, j) += alpha[t] * row[j];
    }
    DropoutCache<T> drop_local;
    DropoutCache<T>* drop = cache ? &cache->drop : &drop_local;
    TensorT<T> out = dropout(pooled, dropout_rate, mode, rng, drop);
    if (cache) {
        cache->x = x;
        cache->alpha = std::move(alpha);
        cache->mask = mask;
    }
    return out;
}

template <class T>
void pool_backward(const TensorT<T>& d_out, PoolCache<T>& cache, PoolWeightsT<T>& w, TensorT<T>& dx) {
    TensorT<T> d_pooled(1, d_out.cols());
    dropout_backward(d_out, cache.drop, &d_pooled);

    const std::size_t rows = cache.x.rows(), width = cache.x.cols();
    // Weighted-sum path and alpha path.
    std::vector<T> d_alpha(rows, T(0));
    for (std::size_t t = 0; t < rows; ++t) {
        if (!cache.mask[t]) continue;
        const T* row = cache.x.row_ptr(t);
        T* dx_row = dx.row_ptr(t);
        T acc = T(0);
        for (std::size_t j = 0; j < width; ++j) {
            acc += d_pooled(0, j) * row[j];
            dx_row[j] += cache.alpha[t] * d_pooled(0, j);
        }
        d_alpha[t] = acc;
    }
    std::vector<T> d_logits = softmax_backward(cache.alpha, d_alpha, &cache.mask);
    for (std::size_t t = 0; t < rows; ++t) {
        if (!cache.mask[t]) continue;
        const T* row = cache.x.row_ptr(t);
        T* dx_row = dx.row_ptr(t);
        for (std::size_t j = 0; j < width; ++j) {
            dx_row[j] += d_logits[t] * w.w_alpha.value(j, 0);
            w.w_alpha.grad(j, 0) += d_logits[t] * row[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Full heterogeneous-interest stack
// ---------------------------------------------------------------------------

template <class T>
struct HipBlockWeightsT {
    ScbWeightsT<T> scb;
    FcbWeightsT<T> fcb;
};

/// Which sub-blocks run; the ablation switches cut SCB or FCB out of every
/// block while the rest of the pipeline stays intact.
struct BlockToggles {
    bool use_scb = true;
    bool use_fcb = true;
};

template <class T>
struct HipCache {
    struct BlockCache {
        ScbCache<T> scb;
        FcbCache<T> fcb;
    };
    std::vector<BlockCache> blocks;
    PoolCache<T> pool;
    std::size_t input_rows = 0;
    std::size_t input_cols = 0;
};

/// N x (SCB then FCB) over the heterogeneous input, then weighted pooling
/// into the global-interest vector (1 x 2d).
template <class T>
TensorT<T> hip_forward(const TensorT<T>& x0, std::vector<HipBlockWeightsT<T>>& blocks,
                       const PoolWeightsT<T>& pool_w, const std::vector<std::uint8_t>& mask,
                       double dropout_rate, Mode mode, RngStream& rng, BlockToggles toggles = {},
                       HipCache<T>* cache = nullptr) {
    if (blocks.empty()) throw ConfigError("hip_forward: at least one block is required");
    if (cache) {
        cache->blocks.assign(blocks.size(), typename HipCache<T>::BlockCache{});
        cache->input_rows = x0.rows();
        cache->input_cols = x0.cols();
    }
    TensorT<T> x = x0;
    for (std::size_t n = 0; n < blocks.size(); ++n) {
        if (toggles.use_scb) x = scb_forward(x, blocks[n].scb, cache ? &cache->blocks[n].scb : nullptr);
        if (toggles.use_fcb) x = fcb_forward(x, blocks[n].fcb, cache ? &cache->blocks[n].fcb : nullptr);
    }
    return pool_forward(x, pool_w, mask, dropout_rate, mode, rng, cache ? &cache->pool : nullptr);
}

/// Exact reverse of hip_forward; returns the gradient w.r.t. the input matrix
/// and accumulates every weight gradient.
template <class T>
TensorT<T> hip_backward(const TensorT<T>& d_pooled, HipCache<T>& cache, std::vector<HipBlockWeightsT<T>>& blocks,
                        PoolWeightsT<T>& pool_w, BlockToggles toggles = {}) {
    if (cache.blocks.size() != blocks.size()) throw Error("hip_backward: missing forward cache");
    TensorT<T> dx(cache.input_rows, cache.input_cols);
    pool_backward(d_pooled, cache.pool, pool_w, dx);
    for (std::size_t n = blocks.size(); n-- > 0;) {
        if (toggles.use_fcb) {
            TensorT<T> d_in(cache.input_rows, cache.input_cols);
            fcb_backward(dx, cache.blocks[n].fcb, blocks[n].fcb, d_in);
            dx = std::move(d_in);
        }
        if (toggles.use_scb) {
            TensorT<T> d_in(cache.input_rows, cache.input_cols);
            scb_backward(dx, cache.blocks[n].scb, blocks[n].scb, d_in);
            dx = std::move(d_in);
        }
    }
    return dx;
}

} // namespace bmlp
