#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bmlp/encoding.hpp"
#include "bmlp/grad_check.hpp"
#include "bmlp/hip.hpp"
#include "bmlp/pip.hpp"

namespace bmlp {

/// Component removals for the ablation study.
struct Ablation {
    bool no_scb = false;
    bool no_fcb = false;
    bool no_pip = false;
    bool no_hip = false;

    bool any() const { return no_scb || no_fcb || no_pip || no_hip; }

    std::string to_string() const {
        std::string s;
        auto add = [&](bool on, const char* name) {
            if (!on) return;
            if (!s.empty()) s += "+";
            s += name;
        };
        add(no_scb, "no_scb");
        add(no_fcb, "no_fcb");
        add(no_pip, "no_pip");
        add(no_hip, "no_hip");
        return s.empty() ? "full" : s;
    }
};

enum class ScoreActivation { softmax, sigmoid };

/// Every architecture and optimization knob. Hidden widths left at 0 resolve
/// to their defaults (sequence-mixing hidden = window length, feature-mixing
/// hidden = feature width).
struct HyperParams {
    std::size_t embed_dim = 64;      // d; rows of the input are 2d wide
    std::size_t seq_len = 50;        // L, heterogeneous window
    std::size_t aux_len = 5;         // L', per-behavior recent window
    std::size_t seq_hidden = 0;      // mixing hidden width in the full-sequence block
    std::size_t feat_hidden = 0;     // per-head hidden width in the feature block
    std::size_t aux_seq_hidden = 0;  // mixing hidden width in the intent blocks
    std::size_t heads = 2;           // H
    std::size_t blocks = 1;          // N stacked blocks in each module
    double lr = 0.01;
    std::size_t batch_size = 512;
    double dropout_rate = 0.2;
    double weight_decay = 1e-4;
    Variant variant = Variant::BT;
    Ablation ablation;
    std::size_t epochs = 100;
    std::size_t patience = 10;
    std::uint64_t seed = 42;
    ScoreActivation score_activation = ScoreActivation::softmax;
    bool pip_scb_residual = false;
    bool pip_mean_excludes_padded = false;
    bool train_all_targets = false; // emit instances for every next event, not only purchases

    std::size_t width() const { return 2 * embed_dim; }
    std::size_t seq_hidden_v() const { return seq_hidden ? seq_hidden : seq_len; }
    std::size_t feat_hidden_v() const { return feat_hidden ? feat_hidden : width(); }
    std::size_t aux_seq_hidden_v() const { return aux_seq_hidden ? aux_seq_hidden : aux_len; }

    BlockToggles toggles() const { return {.use_scb = !ablation.no_scb, .use_fcb = !ablation.no_fcb}; }
    bool use_hip() const { return !ablation.no_hip; }
    bool use_pip() const { return !ablation.no_pip; }
    bool use_gate() const { return use_hip() && use_pip(); }

    PipOptions pip_options() const {
        return {.scb_residual = pip_scb_residual, .mean_excludes_padded = pip_mean_excludes_padded};
    }

    void validate() const {
        if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
        if (blocks == 0) throw ConfigError("block count must be >= 1");
        if (seq_len < aux_len || aux_len < 1)
            throw ConfigError(detail::cat("window lengths must satisfy L >= L' >= 1, got L=", seq_len,
                                          " L'=", aux_len));
        if (heads == 0 || width() % heads != 0)
            throw ConfigError(detail::cat("head count ", heads, " must divide feature width ", width()));
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ConfigError(detail::cat("dropout rate must lie in [0,1), got ", dropout_rate));
        if (ablation.no_hip && ablation.no_pip)
            throw ConfigError("ablations no_hip and no_pip together leave no model");
        if (lr < 0) throw ConfigError("learning rate must be nonnegative");
    }

    /// Architecture fields that a checkpoint must agree on to be loadable
    /// into a run.
    bool architecture_equals(const HyperParams& o) const {
        return embed_dim == o.embed_dim && seq_len == o.seq_len && aux_len == o.aux_len &&
               seq_hidden_v() == o.seq_hidden_v() && feat_hidden_v() == o.feat_hidden_v() &&
               aux_seq_hidden_v() == o.aux_seq_hidden_v() && heads == o.heads && blocks == o.blocks &&
               variant == o.variant && ablation.no_scb == o.ablation.no_scb &&
               ablation.no_fcb == o.ablation.no_fcb && ablation.no_pip == o.ablation.no_pip &&
               ablation.no_hip == o.ablation.no_hip && score_activation == o.score_activation &&
               pip_scb_residual == o.pip_scb_residual && pip_mean_excludes_padded == o.pip_mean_excludes_padded;
    }
};

/// One training example: the heterogeneous window, the auxiliary
/// subsequences drawn from the same prefix, and the next-purchase target.
struct TrainingInstance {
    HeteroSequence hetero;
    AuxSubsequences aux;
    std::uint32_t target_item = 0;
    std::string id;
};

/// Every trainable tensor of the model, with gradients and optimizer state
/// alongside. Ablated components are left unallocated.
template <class T>
struct ModelParamsT {
    HyperParams hp;
    std::size_t n_items = 0;
    std::size_t n_behaviors = 0;

    EmbeddingTablesT<T> tables;
    std::vector<HipBlockWeightsT<T>> hip_blocks;
    PoolWeightsT<T> pool;
    std::vector<PipBlockWeightsT<T>> pip_blocks;
    ParamT<T> w_g, w_l, b_g; // gate
    ParamT<T> w_r, b_r;      // output layer over real items (column j = item j+1)

    ModelParamsT() = default;

    ModelParamsT(const HyperParams& hyper, std::size_t items, std::size_t behaviors, RngStream rng)
        : hp(hyper), n_items(items), n_behaviors(behaviors) {
        hp.validate();
        if (items == 0) throw ConfigError("model needs at least one item");
        if (behaviors == 0) throw ConfigError("model needs at least one behavior");
        const std::size_t m = behaviors - 1;
        if (hp.use_pip() && m == 0)
            throw ConfigError("purchase-intent module needs at least one auxiliary behavior; "
                              "use the no_pip ablation for single-behavior data");
        const std::size_t w = hp.width();
        tables = EmbeddingTablesT<T>(items, behaviors, hp.embed_dim, rng);
        if (hp.use_hip()) {
            for (std::size_t n = 0; n < hp.blocks; ++n) {
                HipBlockWeightsT<T> b;
                if (!hp.ablation.no_scb) b.scb = ScbWeightsT<T>(hp.seq_len, hp.seq_hidden_v(), w, rng);
                if (!hp.ablation.no_fcb) b.fcb = FcbWeightsT<T>(w, hp.feat_hidden_v(), hp.heads, rng);
                hip_blocks.push_back(std::move(b));
            }
            pool = PoolWeightsT<T>(w, rng);
        }
        if (hp.use_pip()) {
            for (std::size_t n = 0; n < hp.blocks; ++n) {
                PipBlockWeightsT<T> b;
                if (!hp.ablation.no_scb)
                    for (std::size_t j = 0; j < m; ++j)
                        b.scb.emplace_back(hp.aux_len, hp.aux_seq_hidden_v(), w, rng);
                if (!hp.ablation.no_fcb) b.fcb = FcbWeightsT<T>(w, hp.feat_hidden_v(), hp.heads, rng);
                pip_blocks.push_back(std::move(b));
            }
        }
        if (hp.use_gate()) {
            const double r = std::sqrt(6.0 / static_cast<double>(2 * w));
            w_g = ParamT<T>(TensorT<T>::random_uniform(w, w, static_cast<T>(-r), static_cast<T>(r), rng));
            w_l = ParamT<T>(TensorT<T>::random_uniform(w, w, static_cast<T>(-r), static_cast<T>(r), rng));
            b_g = ParamT<T>(TensorT<T>(1, w));
        }
        const double ro = std::sqrt(6.0 / static_cast<double>(w + items));
        w_r = ParamT<T>(TensorT<T>::random_uniform(w, items, static_cast<T>(-ro), static_cast<T>(ro), rng));
        b_r = ParamT<T>(TensorT<T>(1, items));
    }

    /// Walks every allocated tensor in the fixed serialization order.
    template <class Fn>
    void visit(Fn&& fn) {
        auto maybe = [&](const std::string& name, ParamT<T>& p) {
            if (p.numel() > 0) fn(name, p);
        };
        maybe("tables.item", tables.item);
        maybe("tables.behavior", tables.behavior);
        maybe("tables.transition", tables.transition);
        for (std::size_t n = 0; n < hip_blocks.size(); ++n) {
            const std::string p = "hip[" + std::to_string(n) + "]";
            maybe(p + ".scb.w1", hip_blocks[n].scb.w1);
            maybe(p + ".scb.w2", hip_blocks[n].scb.w2);
            maybe(p + ".scb.gamma", hip_blocks[n].scb.gamma);
            maybe(p + ".scb.beta", hip_blocks[n].scb.beta);
            for (std::size_t h = 0; h < hip_blocks[n].fcb.heads(); ++h) {
                maybe(p + ".fcb.w1[" + std::to_string(h) + "]", hip_blocks[n].fcb.w1[h]);
                maybe(p + ".fcb.w2[" + std::to_string(h) + "]", hip_blocks[n].fcb.w2[h]);
            }
            maybe(p + ".fcb.w_o", hip_blocks[n].fcb.w_o);
            maybe(p + ".fcb.gamma", hip_blocks[n].fcb.gamma);
            maybe(p + ".fcb.beta", hip_blocks[n].fcb.beta);
        }
        if (hp.use_hip()) maybe("pool.w_alpha", pool.w_alpha);
        for (std::size_t n = 0; n < pip_blocks.size(); ++n) {
            const std::string p = "pip[" + std::to_string(n) + "]";
            for (std::size_t j = 0; j < pip_blocks[n].scb.size(); ++j) {
                const std::string q = p + ".scb[" + std::to_string(j) + "]";
                maybe(q + ".w1", pip_blocks[n].scb[j].w1);
                maybe(q + ".w2", pip_blocks[n].scb[j].w2);
                maybe(q + ".gamma", pip_blocks[n].scb[j].gamma);
                maybe(q + ".beta", pip_blocks[n].scb[j].beta);
            }
            for (std::size_t h = 0; h < pip_blocks[n].fcb.heads(); ++h) {
                maybe(p + ".fcb.w1[" + std::to_string(h) + "]", pip_blocks[n].fcb.w1[h]);
                maybe(p + ".fcb.w2[" + std::to_string(h) + "]", pip_blocks[n].fcb.w2[h]);
            }
            maybe(p + ".fcb.w_o", pip_blocks[n].fcb.w_o);
            maybe(p + ".fcb.gamma", pip_blocks[n].fcb.gamma);
            maybe(p + ".fcb.beta", pip_blocks[n].fcb.beta);
        }
        maybe("gate.w_g", w_g);
        maybe("gate.w_l", w_l);
        maybe("gate.b_g", b_g);
        maybe("out.w_r", w_r);
        maybe("out.b_r", b_r);
    }

    std::vector<ParamRef<T>> param_refs() {
        std::vector<ParamRef<T>> refs;
        visit([&](const std::string& name, ParamT<T>& p) { refs.push_back({name, &p}); });
        return refs;
    }

    void zero_grads() {
        visit([](const std::string&, ParamT<T>& p) { p.zero_grad(); });
    }

    void optimizer_step(double lr, double weight_decay) {
        visit([&](const std::string& name, ParamT<T>& p) { p.step(lr, weight_decay, name); });
    }

    std::size_t count_allocated() {
        std::size_t n = 0;
        visit([&](const std::string&, ParamT<T>& p) { n += p.numel(); });
        return n;
    }
};

using ModelParams = ModelParamsT<double>;

/// Closed-form count of trainable scalars for a configuration, respecting
/// ablations; matches walking the allocated tensors exactly.
inline std::size_t param_count(const HyperParams& hp, std::size_t n_items, std::size_t n_behaviors) {
    const std::size_t d = hp.embed_dim, w = hp.width();
    const std::size_t m = n_behaviors - 1;
    std::size_t total = 0;
    total += (n_items + 1) * d;                        // item table
    total += (n_behaviors + 1) * d;                    // behavior table
    total += (n_behaviors + 1) * (n_behaviors + 1) * d; // transition table
    const std::size_t head_slice = w / hp.heads;
    const std::size_t fcb_sz = hp.heads * (head_slice * hp.feat_hidden_v() + hp.feat_hidden_v() * head_slice) +
                               w * w + 2 * w;
    if (hp.use_hip()) {
        std::size_t per_block = 0;
        if (!hp.ablation.no_scb)
            per_block += hp.seq_len * hp.seq_hidden_v() + hp.seq_hidden_v() * hp.seq_len + 2 * w;
        if (!hp.ablation.no_fcb) per_block += fcb_sz;
        total += hp.blocks * per_block + w; // + pooling vector
    }
    if (hp.use_pip()) {
        std::size_t per_block = 0;
        if (!hp.ablation.no_scb)
            per_block += m * (hp.aux_len * hp.aux_seq_hidden_v() + hp.aux_seq_hidden_v() * hp.aux_len + 2 * w);
        if (!hp.ablation.no_fcb) per_block += fcb_sz;
        total += hp.blocks * per_block;
    }
    if (hp.use_gate()) total += 2 * w * w + w;
    total += w * n_items + n_items; // output layer
    return total;
}

// ---------------------------------------------------------------------------
// Gating, scores, loss
// ---------------------------------------------------------------------------

template <class T>
struct GateCache {
    TensorT<T> e_g, e_l, g;
};

/// g = sigmoid(e_g*W_g + e_l*W_l + b_g); z = g (*) e_g + (1-g) (*) e_l.
template <class T>
TensorT<T> gate_fuse(const TensorT<T>& e_g, const TensorT<T>& e_l, const ParamT<T>& w_g, const ParamT<T>& w_l,
                     const ParamT<T>& b_g, GateCache<T>* cache = nullptr) {
    TensorT<T> pre = dense(e_g, w_g.value, &b_g.value);
    TensorT<T> pre_l = dense(e_l, w_l.value);
    pre.add_(pre_l);
    TensorT<T> g = sigmoid(pre);
    TensorT<T> z(1, g.cols());
    for (std::size_t j = 0; j < g.cols(); ++j)
        z(0, j) = g(0, j) * e_g(0, j) + (T(1) - g(0, j)) * e_l(0, j);
    if (cache) {
        cache->e_g = e_g;
        cache->e_l = e_l;
        cache->g = g;
    }
    return z;
}

template <class T>
void gate_backward(const TensorT<T>& dz, const GateCache<T>& cache, ParamT<T>& w_g, ParamT<T>& w_l,
                   ParamT<T>& b_g, TensorT<T>& de_g, TensorT<T>& de_l) {
    const std::size_t w = dz.cols();
    TensorT<T> d_pre(1, w);
    for (std::size_t j = 0; j < w; ++j) {
        const T g = cache.g(0, j);
        de_g(0, j) += dz(0, j) * g;
        de_l(0, j) += dz(0, j) * (T(1) - g);
        const T dg = dz(0, j) * (cache.e_g(0, j) - cache.e_l(0, j));
        d_pre(0, j) = dg * g * (T(1) - g);
    }
    dense_backward(cache.e_g, w_g.value, d_pre, &de_g, &w_g.grad, &b_g.grad);
    dense_backward(cache.e_l, w_l.value, d_pre, &de_l, &w_l.grad, static_cast<TensorT<T>*>(nullptr));
}

template <class T>
struct ScoreCache {
    TensorT<T> z;
    TensorT<T> probs;
};

/// Item scores from the fused representation. Column j scores item index
/// j+1; the padding index has no column. Softmax produces a distribution,
/// the sigmoid switch scores items independently.
template <class T>
TensorT<T> predict_scores(const TensorT<T>& z, const ParamT<T>& w_r, const ParamT<T>& b_r,
                          ScoreActivation act = ScoreActivation::softmax, ScoreCache<T>* cache = nullptr) {
    TensorT<T> logits = dense(z, w_r.value, &b_r.value);
    TensorT<T> probs = act == ScoreActivation::softmax ? softmax_row(logits) : sigmoid(logits);
    if (cache) {
        cache->z = z;
        cache->probs = probs;
    }
    return probs;
}

inline constexpr double kProbClamp = 1e-12;

/// Binary cross-entropy over every item: -[log p_y + sum_{j!=y} log(1-p_j)],
/// with probabilities clamped to [1e-12, 1-1e-12] before the logs.
/// `target_col` indexes the score vector (item index - 1).
template <class T>
double bce_loss(const TensorT<T>& probs, std::size_t target_col) {
    double loss = 0;
    for (std::size_t j = 0; j < probs.cols(); ++j) {
        double p = static_cast<double>(probs(0, j));
        p = std::min(1.0 - kProbClamp, std::max(kProbClamp, p));
        loss -= j == target_col ? std::log(p) : std::log(1.0 - p);
    }
    return loss;
}

/// d(loss)/d(probs); entries pinned by the clamp get zero gradient.
template <class T>
TensorT<T> bce_loss_backward(const TensorT<T>& probs, std::size_t target_col, double scale = 1.0) {
    TensorT<T> dp(1, probs.cols());
    for (std::size_t j = 0; j < probs.cols(); ++j) {
        const double p = static_cast<double>(probs(0, j));
        if (p < kProbClamp || p > 1.0 - kProbClamp) continue;
        dp(0, j) = static_cast<T>(scale * (j == target_col ? -1.0 / p : 1.0 / (1.0 - p)));
    }
    return dp;
}

/// Gradient through the score activation given d(loss)/d(probs).
template <class T>
TensorT<T> score_backward(const TensorT<T>& dp, const ScoreCache<T>& cache, ScoreActivation act) {
    const std::size_t n = dp.cols();
    TensorT<T> da(1, n);
    if (act == ScoreActivation::softmax) {
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += cache.probs(0, j) * dp(0, j);
        for (std::size_t j = 0; j < n; ++j) da(0, j) = cache.probs(0, j) * (dp(0, j) - dot);
    } else {
        for (std::size_t j = 0; j < n; ++j) {
            const T p = cache.probs(0, j);
            da(0, j) = dp(0, j) * p * (T(1) - p);
        }
    }
    return da;
}

// ---------------------------------------------------------------------------
// End-to-end forward / backward
// ---------------------------------------------------------------------------

template <class T>
struct ForwardCache {
    TensorT<T> x0;
    HeteroEncodeCache hetero_enc;
    HipCache<T> hip;
    TensorT<T> e_g;
    std::vector<TensorT<T>> h0;
    AuxEncodeCache aux_enc;
    PipCache<T> pip;
    TensorT<T> e_l;
    GateCache<T> gate;
    TensorT<T> z;
    ScoreCache<T> score;
};

/// Full pipeline for one instance: encode -> interest stack -> intent stack
/// -> gated fusion -> item scores. Ablations cut whole paths: without the
/// intent module z = e_g, without the interest module z = e_l.
template <class T>
TensorT<T> model_forward(const TrainingInstance& inst, ModelParamsT<T>& params, Mode mode, RngStream& rng,
                         ForwardCache<T>* cache = nullptr) {
    const HyperParams& hp = params.hp;
    const BlockToggles toggles = hp.toggles();
    TensorT<T> e_g, e_l;
    if (hp.use_hip()) {
        TensorT<T> x0 = encode_hetero(inst.hetero, params.tables, hp.variant, cache ? &cache->hetero_enc : nullptr);
        e_g = hip_forward(x0, params.hip_blocks, params.pool, inst.hetero.mask,
                          hp.dropout_rate, mode, rng, toggles, cache ? &cache->hip : nullptr);
        if (cache) cache->x0 = std::move(x0);
    }
    if (hp.use_pip()) {
        std::vector<TensorT<T>> h0 = encode_aux(inst.aux, params.tables, cache ? &cache->aux_enc : nullptr);
        std::vector<std::uint8_t> has_events(inst.aux.n_slices());
        for (std::size_t j = 0; j < inst.aux.n_slices(); ++j) has_events[j] = !inst.aux.slices[j].fully_padded();
        e_l = pip_forward(h0, params.pip_blocks, has_events, hp.pip_options(), toggles,
                          cache ? &cache->pip : nullptr);
        if (cache) cache->h0 = std::move(h0);
    }
    TensorT<T> z;
    if (hp.use_gate())
        z = gate_fuse(e_g, e_l, params.w_g, params.w_l, params.b_g, cache ? &cache->gate : nullptr);
    else
        z = hp.use_hip() ? e_g : e_l;
    if (cache) {
        cache->e_g = std::move(e_g);
        cache->e_l = std::move(e_l);
        cache->z = z;
    }
    return predict_scores(z, params.w_r, params.b_r, hp.score_activation, cache ? &cache->score : nullptr);
}

/// Accumulates gradients of `scale * loss(instance)` into every parameter.
template <class T>
void model_backward(const TrainingInstance& inst, ModelParamsT<T>& params, ForwardCache<T>& cache, double scale) {
    const HyperParams& hp = params.hp;
    const BlockToggles toggles = hp.toggles();
    if (inst.target_item == 0 || inst.target_item > params.n_items)
        throw DataError(detail::cat("backward: target item ", inst.target_item, " out of range"));
    const std::size_t target_col = inst.target_item - 1;

    TensorT<T> dp = bce_loss_backward(cache.score.probs, target_col, scale);
    TensorT<T> da = score_backward(dp, cache.score, hp.score_activation);
    TensorT<T> dz(1, hp.width());
    dense_backward(cache.z, params.w_r.value, da, &dz, &params.w_r.grad, &params.b_r.grad);

    TensorT<T> de_g(1, hp.width()), de_l(1, hp.width());
    if (hp.use_gate())
        gate_backward(dz, cache.gate, params.w_g, params.w_l, params.b_g, de_g, de_l);
    else if (hp.use_hip())
        de_g = dz;
    else
        de_l = dz;

    if (hp.use_hip()) {
        TensorT<T> dx0 = hip_backward(de_g, cache.hip, params.hip_blocks, params.pool, toggles);
        encode_hetero_backward(dx0, cache.hetero_enc, params.tables);
    }
    if (hp.use_pip()) {
        std::vector<TensorT<T>> dh0 = pip_backward(de_l, cache.pip, params.pip_blocks, hp.pip_options(), toggles);
        encode_aux_backward(dh0, cache.aux_enc, params.tables);
    }
}

/// Mean loss of the batch plus one optimizer step. Gradients accumulate in
/// instance order, so the result is a pure function of (params, batch, rng)
/// regardless of the machine.
template <class T>
double train_step(const std::vector<TrainingInstance>& batch, ModelParamsT<T>& params, RngStream step_rng) {
    if (batch.empty()) throw InvalidInputError("train_step: empty batch");
    params.zero_grads();
    const double scale = 1.0 / static_cast<double>(batch.size());
    double mean_loss = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        RngStream inst_rng = step_rng.fork(i);
        ForwardCache<T> cache;
        TensorT<T> probs = model_forward(batch[i], params, Mode::train, inst_rng, &cache);
        const double loss = bce_loss(probs, batch[i].target_item - 1);
        if (!std::isfinite(loss))
            throw NumericError(detail::cat("train_step: non-finite loss on instance '", batch[i].id, "'"));
        mean_loss += loss * scale;
        model_backward(batch[i], params, cache, scale);
    }
    params.optimizer_step(params.hp.lr, params.hp.weight_decay);
    return mean_loss;
}

} // namespace bmlp
