#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "bmlp/model.hpp"

namespace bmlp {

struct TimingPoint {
    std::size_t length = 0;
    double mean_ms = 0.0;
    double std_ms = 0.0;
};

struct TimingCurve {
    std::vector<TimingPoint> points;
    double slope = 0.0;     // ms per unit length
    double intercept = 0.0; // ms
    double r2 = 0.0;
    std::vector<double> ratio_2x; // mean(point i+1) / mean(point i)
};

/// Times one step function per window length: `warmup` unmeasured calls,
/// then `repetitions` measured ones. Fits a line through (length, mean) and
/// reports adjacent ratios; for geometrically doubled lengths a linear-time
/// step sits near ratio 2 and a quadratic one near 4.
inline TimingCurve bench_scaling(const std::function<std::function<void()>(std::size_t)>& step_factory,
                                 const std::vector<std::size_t>& lengths, std::size_t repetitions,
                                 std::size_t warmup) {
    if (lengths.size() < 2) throw ConfigError("bench_scaling: need at least two window lengths");
    if (repetitions < 1) throw ConfigError("bench_scaling: need at least one repetition");
    TimingCurve curve;
    for (std::size_t L : lengths) {
        std::function<void()> step = step_factory(L);
        for (std::size_t i = 0; i < warmup; ++i) step();
        std::vector<double> ms(repetitions);
        for (std::size_t i = 0; i < repetitions; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            step();
            ms[i] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        }
        double mean = 0;
        for (double v : ms) mean += v;
        mean /= static_cast<double>(repetitions);
        double var = 0;
        for (double v : ms) var += (v - mean) * (v - mean);
        var /= static_cast<double>(repetitions);
        curve.points.push_back({L, mean, std::sqrt(var)});
    }
    // Least-squares line through (length, mean_ms).
    const double n = static_cast<double>(curve.points.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (const auto& p : curve.points) {
        const double x = static_cast<double>(p.length);
        sx += x;
        sy += p.mean_ms;
        sxx += x * x;
        sxy += x * p.mean_ms;
        syy += p.mean_ms * p.mean_ms;
    }
    const double denom = n * sxx - sx * sx;
    if (denom != 0) {
        curve.slope = (n * sxy - sx * sy) / denom;
        curve.intercept = (sy - curve.slope * sx) / n;
        double ss_res = 0;
        const double mean_y = sy / n;
        double ss_tot = 0;
        for (const auto& p : curve.points) {
            const double fit = curve.slope * static_cast<double>(p.length) + curve.intercept;
            ss_res += (p.mean_ms - fit) * (p.mean_ms - fit);
            ss_tot += (p.mean_ms - mean_y) * (p.mean_ms - mean_y);
        }
        curve.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    }
    for (std::size_t i = 0; i + 1 < curve.points.size(); ++i)
        curve.ratio_2x.push_back(curve.points[i + 1].mean_ms / curve.points[i].mean_ms);
    return curve;
}

struct BenchModelConfig {
    std::size_t embed_dim = 32;
    std::size_t seq_hidden = 64;  // pinned so cost stays linear in the window
    std::size_t feat_hidden = 64;
    std::size_t heads = 2;
    std::size_t blocks = 2;
    std::size_t aux_len = 5;
    std::size_t n_items = 500;
    std::size_t n_behaviors = 3;
    /// Column count of the planted control matrix; wide enough that the
    /// length x length work dominates the linear part at the top lengths.
    std::size_t control_width = 768;
    std::uint64_t seed = 1234;
};

/// A forward+backward training step on one synthetic sequence of the given
/// length. `quadratic_control` plants an extra length x length matmul so the
/// benchmark can demonstrate it separates linear from quadratic scaling.
template <class T>
std::function<void()> make_bench_step(const BenchModelConfig& cfg, std::size_t length, bool quadratic_control) {
    HyperParams hp;
    hp.embed_dim = cfg.embed_dim;
    hp.seq_len = length;
    hp.aux_len = cfg.aux_len;
    hp.seq_hidden = cfg.seq_hidden;
    hp.feat_hidden = cfg.feat_hidden;
    hp.aux_seq_hidden = cfg.aux_len;
    hp.heads = cfg.heads;
    hp.blocks = cfg.blocks;
    hp.dropout_rate = 0.0;
    hp.weight_decay = 0.0;

    auto params = std::make_shared<ModelParamsT<T>>(hp, cfg.n_items, cfg.n_behaviors, RngStream(cfg.seed));
    RngStream data_rng(cfg.seed ^ 0xABCDEF);
    auto inst = std::make_shared<TrainingInstance>();
    inst->id = "bench";
    inst->hetero.items.assign(length, 0);
    inst->hetero.behaviors.assign(length, 0);
    inst->hetero.mask.assign(length, 1);
    for (std::size_t t = 0; t < length; ++t) {
        inst->hetero.items[t] = static_cast<std::uint32_t>(1 + data_rng.below(cfg.n_items));
        inst->hetero.behaviors[t] = static_cast<std::uint32_t>(1 + data_rng.below(cfg.n_behaviors));
    }
    inst->target_item = static_cast<std::uint32_t>(1 + data_rng.below(cfg.n_items));
    inst->hetero.target_item = inst->target_item;
    for (std::uint32_t b = 1; b <= cfg.n_behaviors; ++b) {
        if (b == cfg.n_behaviors) continue; // treat the last behavior as the target
        AuxSubsequences::Slice s;
        s.behavior = b;
        s.items.assign(cfg.aux_len, 0);
        s.behaviors.assign(cfg.aux_len, 0);
        s.mask.assign(cfg.aux_len, 1);
        for (std::size_t t = 0; t < cfg.aux_len; ++t) {
            s.items[t] = static_cast<std::uint32_t>(1 + data_rng.below(cfg.n_items));
            s.behaviors[t] = b;
        }
        inst->aux.slices.push_back(std::move(s));
    }

    auto planted = std::make_shared<TensorT<T>>();
    if (quadratic_control)
        *planted = TensorT<T>::random_uniform(length, cfg.control_width, T(-1), T(1), data_rng);

    return [params, inst, planted, quadratic_control]() {
        params->zero_grads();
        RngStream rng(7);
        ForwardCache<T> cache;
        model_forward(*inst, *params, Mode::train, rng, &cache);
        model_backward(*inst, *params, cache, 1.0);
        if (quadratic_control) {
            // length x length Gram matrix followed by a projection back:
            // deliberately quadratic in the window length.
            TensorT<T> gram = dense(*planted, transpose(*planted));
            TensorT<T> sink = dense(gram, *planted);
            volatile T guard = sink(0, 0);
            (void)guard;
        }
    };
}

} // namespace bmlp
