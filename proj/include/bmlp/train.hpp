#pragma once

#include <chrono>
#include <numeric>

#include "bmlp/data.hpp"
#include "bmlp/eval.hpp"
#include "bmlp/model.hpp"

namespace bmlp {

struct TrainLogRow {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double val_hr10 = 0.0;
    double val_ndcg10 = 0.0;
    double elapsed_ms = 0.0;
};

struct TrainResult {
    ModelParams params; // best validation HR@10 snapshot (last state if no validation data)
    std::size_t best_epoch = 0;
    double best_val_hr10 = 0.0;
    std::vector<TrainLogRow> log;
    std::size_t n_instances = 0;
};

struct TrainOptions {
    std::size_t eval_every = 1;
    unsigned threads = 1;
    /// Keep the final-epoch parameters instead of the best-validation
    /// snapshot (memorization probes want the fully trained state).
    bool keep_final_params = false;
    /// Called after each epoch's log row; used by the CLI for progress output.
    std::function<void(const TrainLogRow&)> on_epoch;
};

/// Epoch loop with seeded shuffling, per-epoch validation HR@10 and early
/// stopping on stale validation. Deterministic for fixed (split, hyper):
/// every random draw comes from streams forked off the configured seed.
inline TrainResult train_model(const DatasetSplit& split, const Vocab& vocab, const HyperParams& hp,
                               const TrainOptions& opts = {}) {
    hp.validate();
    std::vector<TrainingInstance> instances = gen_instances(split.train, hp, vocab);
    if (instances.empty()) throw DataError("train_model: no training instances (is the split empty?)");

    TrainResult result;
    result.n_instances = instances.size();
    ModelParams params(hp, vocab.n_items(), vocab.n_behaviors(), RngStream(hp.seed));
    RngStream master(hp.seed);

    ModelParams best = params;
    double best_hr = -1.0;
    std::size_t best_epoch = 0;
    std::size_t stale = 0;
    const bool has_validation = !split.valid.empty();

    std::vector<std::size_t> order(instances.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= hp.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        RngStream shuffle_rng = master.fork(epoch, 0);
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t seen = 0, step = 0;
        std::vector<TrainingInstance> batch;
        for (std::size_t pos = 0; pos < order.size();) {
            batch.clear();
            for (; pos < order.size() && batch.size() < hp.batch_size; ++pos)
                batch.push_back(instances[order[pos]]);
            const double mean_loss = train_step(batch, params, master.fork(epoch, 1 + step));
            loss_sum += mean_loss * static_cast<double>(batch.size());
            seen += batch.size();
            ++step;
        }
        TrainLogRow row;
        row.epoch = epoch;
        row.mean_loss = loss_sum / static_cast<double>(seen);
        if (has_validation && (epoch % std::max<std::size_t>(1, opts.eval_every)) == 0) {
            EvalOutcome val = evaluate(params, split.valid, vocab, {10}, opts.threads);
            row.val_hr10 = val.report.hr[0];
            row.val_ndcg10 = val.report.ndcg[0];
            if (row.val_hr10 > best_hr) {
                best_hr = row.val_hr10;
                best = params;
                best_epoch = epoch;
                stale = 0;
            } else {
                ++stale;
            }
        }
        row.elapsed_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back(row);
        if (opts.on_epoch) opts.on_epoch(row);
        if (has_validation && hp.patience > 0 && stale > hp.patience) break;
    }
    if (best_hr < 0 || opts.keep_final_params) {
        result.params = std::move(params);
        result.best_epoch = best_hr < 0 ? (result.log.empty() ? 0 : result.log.back().epoch) : best_epoch;
        result.best_val_hr10 = best_hr < 0 ? 0.0 : best_hr;
    } else {
        result.params = std::move(best);
        result.best_epoch = best_epoch;
        result.best_val_hr10 = best_hr;
    }
    return result;
}

} // namespace bmlp
