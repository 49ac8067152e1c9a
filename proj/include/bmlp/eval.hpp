#pragma once

#include <chrono>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "bmlp/data.hpp"
#include "bmlp/model.hpp"

namespace bmlp {

/// 1-based rank of `target` under descending score order; ties broken by
/// ascending index. Indices in `exclude` never participate.
inline std::size_t rank_of_target(const std::vector<double>& scores, std::size_t target,
                                  const std::set<std::size_t>& exclude = {}) {
    if (target >= scores.size() || exclude.count(target))
        throw InvalidInputError(detail::cat("rank_of_target: target ", target, " is excluded or out of range"));
    const double s = scores[target];
    std::size_t rank = 1;
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (j == target || exclude.count(j)) continue;
        if (scores[j] > s || (scores[j] == s && j < target)) ++rank;
    }
    return rank;
}

/// Fraction of ranks within the top k.
inline double hr_at_k(const std::vector<std::size_t>& ranks, std::size_t k) {
    if (ranks.empty()) throw InvalidInputError("hr_at_k: no ranks (metric undefined)");
    std::size_t hits = 0;
    for (std::size_t r : ranks) hits += r <= k;
    return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

/// Single-relevant-item NDCG: a hit at rank r contributes 1/log2(r+1),
/// a miss contributes 0; the ideal ranking scores 1.
inline double ndcg_at_k(const std::vector<std::size_t>& ranks, std::size_t k) {
    if (ranks.empty()) throw InvalidInputError("ndcg_at_k: no ranks (metric undefined)");
    double sum = 0;
    for (std::size_t r : ranks)
        if (r <= k) sum += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    return sum / static_cast<double>(ranks.size());
}

struct EvalReport {
    std::string group = "all";
    std::size_t n_samples = 0;
    std::vector<std::size_t> ks;
    std::vector<double> hr;
    std::vector<double> ndcg;
    double wall_time_ms = 0.0;
};

inline EvalReport report_from_ranks(const std::vector<std::size_t>& ranks, const std::vector<std::size_t>& ks,
                                    const std::string& group) {
    EvalReport rep;
    rep.group = group;
    rep.n_samples = ranks.size();
    rep.ks = ks;
    for (std::size_t k : ks) {
        rep.hr.push_back(hr_at_k(ranks, k));
        rep.ndcg.push_back(ndcg_at_k(ranks, k));
    }
    return rep;
}

struct EvalOutcome {
    EvalReport report;              // over every sample
    std::vector<std::size_t> ranks; // per sample, aligned with the input order
};

/// Scores every sample with dropout off and ranks its target over the full
/// item set. Parallel over samples; the rank vector (and so every metric) is
/// identical for any thread count.
template <class T>
EvalOutcome evaluate(ModelParamsT<T>& params, const std::vector<EvalSample>& samples, const Vocab& vocab,
                     const std::vector<std::size_t>& ks, unsigned threads = 1) {
    if (samples.empty()) throw InvalidInputError("evaluate: empty split");
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> ranks(samples.size(), 0);
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        const EvalSample& s = samples[i];
        TrainingInstance inst = make_instance(s.history, s.history.size(), s.target_item, params.hp, vocab,
                                              s.user);
        RngStream rng(0); // eval mode draws nothing
        TensorT<T> probs = model_forward(inst, params, Mode::eval, rng);
        std::vector<double> scores(probs.data.begin(), probs.data.end());
        ranks[i] = rank_of_target(scores, s.target_item - 1);
    });
    EvalOutcome out;
    out.ranks = std::move(ranks);
    out.report = report_from_ranks(out.ranks, ks, "all");
    out.report.wall_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

struct ExaminedGroups {
    std::vector<std::size_t> examined;   // sample indices
    std::vector<std::size_t> unexamined; // sample indices
    double examined_rate = 0.0;
};

/// Partition by whether the target item occurs anywhere in the sample's
/// stored history.
inline ExaminedGroups group_examined(const std::vector<EvalSample>& samples) {
    ExaminedGroups g;
    for (std::size_t i = 0; i < samples.size(); ++i)
        (samples[i].examined() ? g.examined : g.unexamined).push_back(i);
    g.examined_rate = samples.empty() ? 0.0
                                      : static_cast<double>(g.examined.size()) /
                                            static_cast<double>(samples.size());
    return g;
}

inline std::vector<std::size_t> select_ranks(const std::vector<std::size_t>& ranks,
                                             const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(ranks[i]);
    return out;
}

/// Alternative test split probing auxiliary intent: per user, the target is
/// the latest auxiliary event between the last two purchases and the history
/// is everything before it. Users without such an event are excluded.
inline std::vector<EvalSample> intent_testset(const std::vector<EvalSample>& test, const Vocab& vocab) {
    std::vector<EvalSample> out;
    for (const auto& s : test) {
        // The last purchase inside the history is the penultimate one; the
        // events after it are exactly the auxiliaries between the two.
        std::size_t penult = s.history.size();
        for (std::size_t k = s.history.size(); k-- > 0;) {
            if (s.history[k].behavior == vocab.target_behavior) {
                penult = k;
                break;
            }
        }
        if (penult == s.history.size()) continue; // no purchase in history
        std::size_t chosen = s.history.size();
        for (std::size_t k = s.history.size(); k-- > penult + 1;) {
            if (s.history[k].behavior != vocab.target_behavior) {
                chosen = k;
                break;
            }
        }
        if (chosen == s.history.size()) continue; // nothing between the purchases
        EvalSample alt;
        alt.user = s.user;
        alt.target_item = s.history[chosen].item;
        alt.target_ts = s.history[chosen].ts;
        alt.target_ord = s.history[chosen].ord;
        alt.history.assign(s.history.begin(), s.history.begin() + static_cast<std::ptrdiff_t>(chosen));
        out.push_back(std::move(alt));
    }
    if (out.empty()) throw InvalidInputError("intent_testset: no user has an auxiliary event between the last two purchases");
    return out;
}

} // namespace bmlp
