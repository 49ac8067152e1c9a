#pragma once

#include <cstdint>
#include <vector>

#include "bmlp/adam.hpp"
#include "bmlp/numerics.hpp"
#include "bmlp/vocab.hpp"

namespace bmlp {

/// Pseudo-behavior closing the final transition of a sequence: the last real
/// event transitions to TERMINAL instead of an unknown next behavior. It
/// shares slot 0 of the `next` axis, which real data never uses because
/// padding sits strictly before the first real event.
inline constexpr std::uint32_t kTerminalBehavior = 0;

/// Behavior-encoding variants: S ignores behavior information, B uses the
/// behavior-type embedding, T the transition embedding, BT their sum.
enum class Variant { S, B, T, BT };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::S: return "S";
        case Variant::B: return "B";
        case Variant::T: return "T";
        default: return "BT";
    }
}

/// A user's fixed-length heterogeneous window: L item/behavior indices,
/// left-padded with 0, plus the real-event mask (a suffix of trues).
struct HeteroSequence {
    std::vector<std::uint32_t> items;
    std::vector<std::uint32_t> behaviors;
    std::vector<std::uint8_t> mask;
    std::uint32_t target_item = 0;
    std::string user;

    std::size_t length() const { return items.size(); }
};

/// Per auxiliary behavior: the most recent L' events of that behavior,
/// left-padded. Target-behavior events never appear here.
struct AuxSubsequences {
    struct Slice {
        std::uint32_t behavior = 0; // the auxiliary behavior this slice tracks
        std::vector<std::uint32_t> items;
        std::vector<std::uint32_t> behaviors;
        std::vector<std::uint8_t> mask;

        bool fully_padded() const {
            for (auto m : mask)
                if (m) return false;
            return true;
        }
    };
    std::vector<Slice> slices;

    std::size_t n_slices() const { return slices.size(); }
    std::size_t length() const { return slices.empty() ? 0 : slices[0].items.size(); }
};

/// Item, behavior-type and behavior-transition embeddings. Row 0 of the item
/// and behavior tables is the frozen all-zero padding row.
template <class T>
struct EmbeddingTablesT {
    ParamT<T> item;       // (|I|+1) x d
    ParamT<T> behavior;   // (|B|+1) x d
    ParamT<T> transition; // (|B|+1)^2 x d, indexed by current*(|B|+1) + next
    std::size_t dim = 0;
    std::size_t n_behaviors = 0;

    EmbeddingTablesT() = default;

    EmbeddingTablesT(std::size_t n_items, std::size_t n_behaviors_, std::size_t d, RngStream& rng)
        : dim(d), n_behaviors(n_behaviors_) {
        const double r = 0.1 / std::sqrt(static_cast<double>(d));
        item = ParamT<T>(TensorT<T>::random_uniform(n_items + 1, d, static_cast<T>(-r), static_cast<T>(r), rng));
        behavior = ParamT<T>(TensorT<T>::random_uniform(n_behaviors_ + 1, d, static_cast<T>(-r), static_cast<T>(r), rng));
        transition = ParamT<T>(TensorT<T>::random_uniform((n_behaviors_ + 1) * (n_behaviors_ + 1), d,
                                                          static_cast<T>(-r), static_cast<T>(r), rng));
        for (std::size_t j = 0; j < d; ++j) {
            item.value(0, j) = T(0);
            behavior.value(0, j) = T(0);
        }
        // Transitions out of the padding pseudo-behavior never occur; keep
        // those rows at zero (rows 0..|B| encode current == 0).
        for (std::size_t next = 0; next <= n_behaviors_; ++next)
            for (std::size_t j = 0; j < d; ++j) transition.value(next, j) = T(0);
    }

    std::size_t transition_index(std::uint32_t current, std::uint32_t next) const {
        return static_cast<std::size_t>(current) * (n_behaviors + 1) + next;
    }
};

using EmbeddingTables = EmbeddingTablesT<double>;

/// Decodes a transition-table row index back to its (current, next) pair.
inline std::pair<std::uint32_t, std::uint32_t> decode_transition_index(std::size_t index, std::size_t n_behaviors) {
    const std::size_t base = n_behaviors + 1;
    return {static_cast<std::uint32_t>(index / base), static_cast<std::uint32_t>(index % base)};
}

/// Index provenance of one encoded hetero row, kept for the backward scatter.
struct HeteroEncodeCache {
    Variant variant = Variant::BT;
    std::vector<std::uint32_t> items;
    std::vector<std::uint32_t> behaviors;
    std::vector<std::uint32_t> transitions; // table row per position (real positions only)
    std::vector<std::uint8_t> mask;
};

/// Builds the L x 2d heterogeneous input matrix: row t is
/// concat(M_t, item_embedding) where M_t depends on the variant (zero for S,
/// behavior type for B, transition for T, their sum for BT). The last real
/// position's transition pairs its behavior with TERMINAL. Padded positions
/// are all-zero rows.
template <class T>
TensorT<T> encode_hetero(const HeteroSequence& seq, const EmbeddingTablesT<T>& tables, Variant variant,
                         HeteroEncodeCache* cache = nullptr) {
    const std::size_t L = seq.length();
    const std::size_t d = tables.dim;
    TensorT<T> x(L, 2 * d);
    if (cache) {
        cache->variant = variant;
        cache->items = seq.items;
        cache->behaviors = seq.behaviors;
        cache->transitions.assign(L, 0);
        cache->mask = seq.mask;
    }
    for (std::size_t t = 0; t < L; ++t) {
        if (!seq.mask[t]) {
            if (seq.items[t] != 0 || seq.behaviors[t] != 0)
                throw DataError(detail::cat("encode_hetero: padded position ", t, " carries a non-padding index"));
            continue;
        }
        const std::uint32_t it = seq.items[t];
        const std::uint32_t bt = seq.behaviors[t];
        if (it >= tables.item.value.rows())
            throw DataError(detail::cat("encode_hetero: item index ", it, " out of bounds at position ", t));
        if (bt == 0 || bt >= tables.behavior.value.rows())
            throw DataError(detail::cat("encode_hetero: behavior index ", bt, " out of bounds at position ", t));
        const bool last_real = (t + 1 == L) || !seq.mask[t + 1];
        const std::uint32_t next = last_real ? kTerminalBehavior : seq.behaviors[t + 1];
        const std::size_t trans_row = tables.transition_index(bt, next);
        if (cache) cache->transitions[t] = static_cast<std::uint32_t>(trans_row);
        T* row = x.row_ptr(t);
        if (variant == Variant::B || variant == Variant::BT)
            for (std::size_t j = 0; j < d; ++j) row[j] += tables.behavior.value(bt, j);
        if (variant == Variant::T || variant == Variant::BT)
            for (std::size_t j = 0; j < d; ++j) row[j] += tables.transition.value(trans_row, j);
        for (std::size_t j = 0; j < d; ++j) row[d + j] = tables.item.value(it, j);
    }
    return x;
}

/// Scatter-add of row gradients into an embedding-table gradient. Rows whose
/// index is 0 (padding) are dropped so the frozen padding row never moves.
template <class T>
void embedding_backward(const TensorT<T>& grad_rows, const std::vector<std::uint32_t>& indices,
                        TensorT<T>& table_grad) {
    if (grad_rows.rows() != indices.size())
        throw DimensionError(detail::cat("embedding_backward: ", grad_rows.rows(), " gradient rows vs ",
                                         indices.size(), " indices"));
    if (grad_rows.cols() != table_grad.cols())
        throw DimensionError(detail::cat("embedding_backward: row width ", grad_rows.cols(),
                                         " vs table width ", table_grad.cols()));
    for (std::size_t r = 0; r < grad_rows.rows(); ++r) {
        const std::uint32_t idx = indices[r];
        if (idx == 0) continue;
        T* dst = table_grad.row_ptr(idx);
        const T* src = grad_rows.row_ptr(r);
        for (std::size_t j = 0; j < grad_rows.cols(); ++j) dst[j] += src[j];
    }
}

/// Routes dX (L x 2d) back into the item / behavior / transition tables.
template <class T>
void encode_hetero_backward(const TensorT<T>& dx, const HeteroEncodeCache& cache, EmbeddingTablesT<T>& tables) {
    const std::size_t L = dx.rows();
    const std::size_t d = tables.dim;
    for (std::size_t t = 0; t < L; ++t) {
        if (!cache.mask[t]) continue;
        const T* row = dx.row_ptr(t);
        const std::uint32_t it = cache.items[t];
        T* d_item = tables.item.grad.row_ptr(it);
        for (std::size_t j = 0; j < d; ++j) d_item[j] += row[d + j];
        if (cache.variant == Variant::B || cache.variant == Variant::BT) {
            T* d_beh = tables.behavior.grad.row_ptr(cache.behaviors[t]);
            for (std::size_t j = 0; j < d; ++j) d_beh[j] += row[j];
        }
        if (cache.variant == Variant::T || cache.variant == Variant::BT) {
            T* d_tr = tables.transition.grad.row_ptr(cache.transitions[t]);
            for (std::size_t j = 0; j < d; ++j) d_tr[j] += row[j];
        }
    }
}

/// Picks, per auxiliary behavior, the most recent L' events of that behavior
/// from the history (events strictly before the prediction point), in time
/// order, left-padded when fewer exist. Target-behavior events never appear.
inline AuxSubsequences extract_aux(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& history,
                                   std::size_t aux_len, const Vocab& vocab) {
    if (aux_len < 1) throw InvalidInputError("extract_aux: subsequence length must be >= 1");
    AuxSubsequences out;
    for (std::uint32_t b : vocab.aux_behaviors()) {
        AuxSubsequences::Slice s;
        s.behavior = b;
        std::vector<std::uint32_t> picked;
        for (const auto& [item, behavior] : history)
            if (behavior == b) picked.push_back(item);
        const std::size_t keep = std::min(aux_len, picked.size());
        s.items.assign(aux_len, 0);
        s.behaviors.assign(aux_len, 0);
        s.mask.assign(aux_len, 0);
        for (std::size_t k = 0; k < keep; ++k) {
            const std::size_t pos = aux_len - keep + k;
            s.items[pos] = picked[picked.size() - keep + k];
            s.behaviors[pos] = b;
            s.mask[pos] = 1;
        }
        out.slices.push_back(std::move(s));
    }
    return out;
}

struct AuxEncodeCache {
    std::vector<std::vector<std::uint32_t>> items;     // per slice
    std::vector<std::vector<std::uint32_t>> behaviors; // per slice
    std::vector<std::vector<std::uint8_t>> mask;
};

/// Builds the L' x 2d matrix per auxiliary behavior: row t is
/// concat(behavior_embedding, item_embedding); no transition term here.
/// Padded rows are zero.
template <class T>
std::vector<TensorT<T>> encode_aux(const AuxSubsequences& aux, const EmbeddingTablesT<T>& tables,
                                   AuxEncodeCache* cache = nullptr) {
    const std::size_t d = tables.dim;
    std::vector<TensorT<T>> out;
    if (cache) {
        cache->items.clear();
        cache->behaviors.clear();
        cache->mask.clear();
    }
    for (const auto& s : aux.slices) {
        const std::size_t Lp = s.items.size();
        TensorT<T> h(Lp, 2 * d);
        for (std::size_t t = 0; t < Lp; ++t) {
            if (!s.mask[t]) {
                if (s.items[t] != 0 || s.behaviors[t] != 0)
                    throw DataError(detail::cat("encode_aux: padded position ", t, " carries a non-padding index"));
                continue;
            }
            const std::uint32_t it = s.items[t];
            const std::uint32_t bt = s.behaviors[t];
            if (it >= tables.item.value.rows())
                throw DataError(detail::cat("encode_aux: item index ", it, " out of bounds at position ", t));
            if (bt == 0 || bt >= tables.behavior.value.rows())
                throw DataError(detail::cat("encode_aux: behavior index ", bt, " out of bounds at position ", t));
            T* row = h.row_ptr(t);
            for (std::size_t j = 0; j < d; ++j) {
                row[j] = tables.behavior.value(bt, j);
                row[d + j] = tables.item.value(it, j);
            }
        }
        out.push_back(std::move(h));
        if (cache) {
            cache->items.push_back(s.items);
            cache->behaviors.push_back(s.behaviors);
            cache->mask.push_back(s.mask);
        }
    }
    return out;
}

template <class T>
void encode_aux_backward(const std::vector<TensorT<T>>& dh, const AuxEncodeCache& cache,
                         EmbeddingTablesT<T>& tables) {
    const std::size_t d = tables.dim;
    for (std::size_t s = 0; s < dh.size(); ++s) {
        for (std::size_t t = 0; t < dh[s].rows(); ++t) {
            if (!cache.mask[s][t]) continue;
            const T* row = dh[s].row_ptr(t);
            T* d_beh = tables.behavior.grad.row_ptr(cache.behaviors[s][t]);
            T* d_item = tables.item.grad.row_ptr(cache.items[s][t]);
            for (std::size_t j = 0; j < d; ++j) {
                d_beh[j] += row[j];
                d_item[j] += row[d + j];
            }
        }
    }
}

} // namespace bmlp
