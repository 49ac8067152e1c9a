#pragma once

#include <cstdint>
#include <vector>

#include "bmlp/hip.hpp"

namespace bmlp {

/// One purchase-intent block: an SCB per auxiliary behavior (its own
/// weights, since the dynamics of clicks and favorites differ) plus a single
/// FCB shared across the stacked slices.
template <class T>
struct PipBlockWeightsT {
    std::vector<ScbWeightsT<T>> scb; // one per auxiliary behavior
    FcbWeightsT<T> fcb;

    PipBlockWeightsT() = default;

    PipBlockWeightsT(std::size_t n_aux, std::size_t aux_len, std::size_t hidden, std::size_t width,
                     std::size_t fcb_hidden, std::size_t heads, RngStream& rng) {
        for (std::size_t j = 0; j < n_aux; ++j) scb.emplace_back(aux_len, hidden, width, rng);
        fcb = FcbWeightsT<T>(width, fcb_hidden, heads, rng);
    }
};

struct PipOptions {
    /// Adds the slice input back onto the per-slice SCB output. The mixing
    /// step is defined without that residual (unlike the full-sequence
    /// block); the switch exists to probe the difference.
    bool scb_residual = false;
    /// Drops fully-padded auxiliary behaviors from the final mean instead of
    /// averaging their propagated-zero slices in.
    bool mean_excludes_padded = false;
};

template <class T>
struct PipBlockCache {
    std::vector<ScbCache<T>> scb;     // per slice
    std::vector<FcbCache<T>> fcb;     // per slice (weights shared, caches not)
    std::vector<TensorT<T>> stacked;  // SCB outputs, kept for the FCB backward
};

/// One block over the L' x m x 2d tensor (held as m slices): each slice goes
/// through its own SCB core (no residual, no layer norm), the stack goes
/// through the shared FCB, and the block input is added back:
/// out = h_in + fcb_core(layer_norm(stack)).
template <class T>
std::vector<TensorT<T>> pip_block_forward(const std::vector<TensorT<T>>& h_in,
                                          PipBlockWeightsT<T>& w, const PipOptions& opts,
                                          BlockToggles toggles = {}, PipBlockCache<T>* cache = nullptr) {
    const std::size_t m = h_in.size();
    if (toggles.use_scb && m != w.scb.size())
        throw DimensionError(detail::cat("pip_block: ", m, " slices vs ", w.scb.size(), " mixing blocks"));
    if (cache) {
        cache->scb.assign(m, ScbCache<T>{});
        cache->fcb.assign(m, FcbCache<T>{});
        cache->stacked.assign(m, TensorT<T>{});
    }
    std::vector<TensorT<T>> stacked(m);
    for (std::size_t j = 0; j < m; ++j) {
        if (toggles.use_scb) {
            stacked[j] = scb_core_forward(h_in[j], w.scb[j], cache ? &cache->scb[j] : nullptr);
            if (opts.scb_residual) stacked[j].add_(h_in[j]);
        } else {
            stacked[j] = h_in[j];
        }
    }
    if (!toggles.use_fcb) {
        // FCB step removed: the stacked mixing output is the block output.
        if (cache) cache->stacked = stacked;
        return stacked;
    }
    std::vector<TensorT<T>> out(m);
    for (std::size_t j = 0; j < m; ++j) {
        out[j] = fcb_core_forward(stacked[j], w.fcb, cache ? &cache->fcb[j] : nullptr);
        out[j].add_(h_in[j]);
    }
    if (cache) cache->stacked = std::move(stacked);
    return out;
}

template <class T>
std::vector<TensorT<T>> pip_block_backward(const std::vector<TensorT<T>>& d_out, PipBlockCache<T>& cache,
                                           PipBlockWeightsT<T>& w, const PipOptions& opts,
                                           BlockToggles toggles = {}) {
    const std::size_t m = d_out.size();
    std::vector<TensorT<T>> d_in(m);
    std::vector<TensorT<T>> d_stacked(m);
    for (std::size_t j = 0; j < m; ++j) {
        d_in[j] = TensorT<T>(d_out[j].rows(), d_out[j].cols());
        d_stacked[j] = TensorT<T>(d_out[j].rows(), d_out[j].cols());
    }
    if (toggles.use_fcb) {
        for (std::size_t j = 0; j < m; ++j) {
            d_in[j].add_(d_out[j]); // residual from the block input
            fcb_core_backward(d_out[j], cache.fcb[j], w.fcb, d_stacked[j]);
        }
    } else {
        d_stacked = d_out;
    }
    for (std::size_t j = 0; j < m; ++j) {
        if (toggles.use_scb) {
            scb_core_backward(d_stacked[j], cache.scb[j], w.scb[j], d_in[j]);
            if (opts.scb_residual) d_in[j].add_(d_stacked[j]);
        } else {
            d_in[j].add_(d_stacked[j]);
        }
    }
    return d_in;
}

template <class T>
struct PipCache {
    std::vector<PipBlockCache<T>> blocks;
    std::vector<std::uint8_t> slice_included; // which slices entered the mean
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t m = 0;
};

/// Mean of the final-position rows across behavior slices (1 x 2d). By
/// default every slice participates; fully-padded ones contribute whatever
/// the blocks propagated from zeros.
template <class T>
TensorT<T> pip_intent(const std::vector<TensorT<T>>& h, const std::vector<std::uint8_t>& slice_has_events,
                      const PipOptions& opts, std::vector<std::uint8_t>* included_out = nullptr) {
    const std::size_t m = h.size();
    if (m == 0) throw InvalidInputError("pip_intent: no auxiliary behaviors");
    const std::size_t width = h[0].cols();
    std::vector<std::uint8_t> included(m, 1);
    if (opts.mean_excludes_padded)
        for (std::size_t j = 0; j < m; ++j) included[j] = slice_has_events[j];
    std::size_t count = 0;
    for (auto i : included) count += i;
    TensorT<T> e(1, width);
    if (count == 0) {
        if (included_out) *included_out = included;
        return e; // every slice empty and excluded: zero intent
    }
    for (std::size_t j = 0; j < m; ++j) {
        if (!included[j]) continue;
        const std::size_t last = h[j].rows() - 1;
        for (std::size_t c = 0; c < width; ++c) e(0, c) += h[j](last, c);
    }
    e.scale_(T(1) / static_cast<T>(count));
    if (included_out) *included_out = included;
    return e;
}

/// N purchase-intent blocks then the last-position mean.
template <class T>
TensorT<T> pip_forward(const std::vector<TensorT<T>>& h0, std::vector<PipBlockWeightsT<T>>& blocks,
                       const std::vector<std::uint8_t>& slice_has_events, const PipOptions& opts,
                       BlockToggles toggles = {}, PipCache<T>* cache = nullptr) {
    if (blocks.empty()) throw ConfigError("pip_forward: at least one block is required");
    if (cache) {
        cache->blocks.assign(blocks.size(), PipBlockCache<T>{});
        cache->m = h0.size();
        cache->rows = h0.empty() ? 0 : h0[0].rows();
        cache->cols = h0.empty() ? 0 : h0[0].cols();
    }
    std::vector<TensorT<T>> h = h0;
    for (std::size_t n = 0; n < blocks.size(); ++n)
        h = pip_block_forward(h, blocks[n], opts, toggles, cache ? &cache->blocks[n] : nullptr);
    std::vector<std::uint8_t> included;
    TensorT<T> e = pip_intent(h, slice_has_events, opts, &included);
    if (cache) cache->slice_included = included;
    return e;
}

template <class T>
std::vector<TensorT<T>> pip_backward(const TensorT<T>& d_intent, PipCache<T>& cache,
                                     std::vector<PipBlockWeightsT<T>>& blocks, const PipOptions& opts,
                                     BlockToggles toggles = {}) {
    if (cache.blocks.size() != blocks.size()) throw Error("pip_backward: missing forward cache");
    std::size_t count = 0;
    for (auto i : cache.slice_included) count += i;
    std::vector<TensorT<T>> dh(cache.m);
    for (std::size_t j = 0; j < cache.m; ++j) dh[j] = TensorT<T>(cache.rows, cache.cols);
    if (count > 0) {
        const T inv = T(1) / static_cast<T>(count);
        for (std::size_t j = 0; j < cache.m; ++j) {
            if (!cache.slice_included[j]) continue;
            for (std::size_t c = 0; c < cache.cols; ++c) dh[j](cache.rows - 1, c) = d_intent(0, c) * inv;
        }
    }
    for (std::size_t n = blocks.size(); n-- > 0;)
        dh = pip_block_backward(dh, cache.blocks[n], blocks[n], opts, toggles);
    return dh;
}

} // namespace bmlp
