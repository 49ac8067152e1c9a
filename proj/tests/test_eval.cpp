#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "bmlp/bench.hpp"
#include "bmlp/eval.hpp"

using namespace bmlp;

namespace {

// Brute-force oracle: materialize the full descending sort with the
// ascending-index tie-break and look the target up.
std::size_t rank_oracle(const std::vector<double>& scores, std::size_t target,
                        const std::set<std::size_t>& exclude = {}) {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (!exclude.count(j)) idx.push_back(j);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    for (std::size_t r = 0; r < idx.size(); ++r)
        if (idx[r] == target) return r + 1;
    throw std::logic_error("target not found");
}

Vocab synthetic_vocab(std::size_t n_items, std::size_t n_behaviors, std::uint32_t target) {
    Vocab v;
    v.items.push_back("");
    v.behaviors.push_back("");
    for (std::size_t i = 1; i <= n_items; ++i) {
        v.items.push_back("item" + std::to_string(i));
        v.item_index.emplace(v.items.back(), static_cast<std::uint32_t>(i));
    }
    for (std::size_t b = 1; b <= n_behaviors; ++b) {
        v.behaviors.push_back("beh" + std::to_string(b));
        v.behavior_index.emplace(v.behaviors.back(), static_cast<std::uint32_t>(b));
    }
    v.target_behavior = target;
    return v;
}

std::vector<EvalSample> synthetic_samples(std::size_t n, std::size_t n_items, std::size_t n_behaviors,
                                          RngStream& rng) {
    std::vector<EvalSample> out;
    for (std::size_t s = 0; s < n; ++s) {
        EvalSample e;
        e.user = "u" + std::to_string(s);
        std::int64_t t = 0;
        const std::size_t len = 3 + rng.below(8);
        for (std::size_t k = 0; k < len; ++k) {
            IndexedEvent ev;
            ev.item = static_cast<std::uint32_t>(1 + rng.below(n_items));
            ev.behavior = static_cast<std::uint32_t>(1 + rng.below(n_behaviors));
            ev.ts = (t += 5);
            ev.ord = k;
            e.history.push_back(ev);
        }
        e.target_item = static_cast<std::uint32_t>(1 + rng.below(n_items));
        e.target_ts = t + 5;
        e.target_ord = len;
        out.push_back(std::move(e));
    }
    return out;
}

} // namespace

TEST_CASE("rank_of_target examples") {
    SECTION("unique maximum ranks first") {
        std::vector<double> s{0.1, 0.9, 0.2};
        CHECK(rank_of_target(s, 1) == 1);
    }
    SECTION("all-equal scores fall back to the index tie-break") {
        std::vector<double> s(5, 0.2);
        CHECK(rank_of_target(s, 3, {0}) == 3);
        CHECK(rank_of_target(s, 1, {0}) == 1);
        CHECK(rank_of_target(s, 4, {0}) == 4);
    }
    SECTION("excluded target is an error") {
        std::vector<double> s{0.5, 0.5};
        CHECK_THROWS_AS(rank_of_target(s, 0, {0}), InvalidInputError);
    }
}

TEST_CASE("rank_of_target matches the full-sort oracle on random vectors") {
    RngStream rng(501);
    for (int rep = 0; rep < 300; ++rep) {
        const std::size_t n = 2 + rng.below(49);
        std::vector<double> scores(n);
        for (auto& v : scores) v = rng.uniform();
        if (rep % 3 == 0) {
            // Plant ties to exercise the tie-break.
            for (std::size_t j = 0; j + 1 < n; j += 2) scores[j + 1] = scores[j];
        }
        const std::size_t target = rng.below(n);
        CHECK(rank_of_target(scores, target) == rank_oracle(scores, target));
    }
}

TEST_CASE("hr and ndcg exact arithmetic") {
    std::vector<std::size_t> one{1};
    CHECK(hr_at_k(one, 10) == 1.0);
    CHECK(ndcg_at_k(one, 10) == 1.0);

    std::vector<std::size_t> three{3};
    CHECK(ndcg_at_k(three, 10) == Catch::Approx(0.5).epsilon(1e-12)); // 1/log2(4)

    std::vector<std::size_t> eleven{11};
    CHECK(hr_at_k(eleven, 10) == 0.0);
    CHECK(ndcg_at_k(eleven, 10) == 0.0);

    CHECK_THROWS_AS(hr_at_k({}, 10), InvalidInputError);
    CHECK_THROWS_AS(ndcg_at_k({}, 10), InvalidInputError);
}

TEST_CASE("metrics match a brute-force oracle on random score vectors") {
    RngStream rng(503);
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n = 5 + rng.below(46);
        std::vector<double> scores(n);
        for (auto& v : scores) v = rng.uniform(-2, 2);
        const std::size_t target = rng.below(n);
        CHECK(rank_of_target(scores, target) == rank_oracle(scores, target));
    }
    // Non-decreasing in k; ndcg <= hr.
    RngStream rng2(504);
    std::vector<std::size_t> ranks;
    for (int i = 0; i < 100; ++i) ranks.push_back(1 + rng2.below(40));
    double prev_hr = 0, prev_ndcg = 0;
    for (std::size_t k : {1u, 5u, 10u, 20u, 40u}) {
        const double h = hr_at_k(ranks, k), n = ndcg_at_k(ranks, k);
        CHECK(n <= h + 1e-12);
        CHECK(h >= prev_hr);
        CHECK(n >= prev_ndcg);
        prev_hr = h;
        prev_ndcg = n;
    }
}

TEST_CASE("evaluate: spiked-bias oracle model scores perfectly; reruns identical") {
    HyperParams hp;
    hp.embed_dim = 4;
    hp.seq_len = 6;
    hp.aux_len = 3;
    hp.seq_hidden = 6;
    hp.feat_hidden = 8;
    hp.aux_seq_hidden = 3;
    hp.dropout_rate = 0.0;
    Vocab vocab = synthetic_vocab(12, 3, 3);
    RngStream rng(505);
    auto samples = synthetic_samples(8, 12, 3, rng);

    ModelParams params(hp, vocab.n_items(), vocab.n_behaviors(), RngStream(3));
    // Oracle model: spike the output bias on each sample's own target.
    std::vector<std::size_t> ranks;
    for (const auto& s : samples) {
        params.b_r.value.set_zero();
        params.b_r.value(0, s.target_item - 1) = 1000.0;
        auto outcome = evaluate(params, {s}, vocab, {10});
        ranks.push_back(outcome.ranks[0]);
    }
    for (std::size_t r : ranks) CHECK(r == 1);

    params.b_r.value.set_zero();
    auto a = evaluate(params, samples, vocab, {10, 20}, 1);
    auto b = evaluate(params, samples, vocab, {10, 20}, 4);
    CHECK(a.ranks == b.ranks);
    CHECK(a.report.hr == b.report.hr);
    CHECK(a.report.ndcg == b.report.ndcg);
}

TEST_CASE("evaluate is invariant under order-preserving score transforms") {
    // Ranks depend only on score order: scaling the logits of a linear model
    // by a positive constant must not change any rank.
    HyperParams hp;
    hp.embed_dim = 4;
    hp.seq_len = 6;
    hp.aux_len = 3;
    hp.seq_hidden = 6;
    hp.feat_hidden = 8;
    hp.aux_seq_hidden = 3;
    Vocab vocab = synthetic_vocab(10, 3, 3);
    RngStream rng(507);
    auto samples = synthetic_samples(10, 10, 3, rng);
    ModelParams params(hp, vocab.n_items(), vocab.n_behaviors(), RngStream(9));
    auto base = evaluate(params, samples, vocab, {10});
    params.w_r.value.scale_(3.0); // softmax is monotone in the logits
    params.b_r.value.scale_(3.0);
    auto scaled = evaluate(params, samples, vocab, {10});
    CHECK(base.ranks == scaled.ranks);
}

TEST_CASE("group_examined partitions the test set") {
    RngStream rng(509);
    auto samples = synthetic_samples(30, 8, 3, rng);
    ExaminedGroups g = group_examined(samples);
    CHECK(g.examined.size() + g.unexamined.size() == samples.size());
    for (std::size_t i : g.examined) CHECK(samples[i].examined());
    for (std::size_t i : g.unexamined) CHECK(!samples[i].examined());
    CHECK(g.examined_rate == Catch::Approx(static_cast<double>(g.examined.size()) / samples.size()));

    // Hand examples: history [click A] target A vs target B.
    EvalSample ea;
    ea.history = {{1, 1, 10, 0}};
    ea.target_item = 1;
    CHECK(ea.examined());
    EvalSample eb = ea;
    eb.target_item = 2;
    CHECK(!eb.examined());
}

TEST_CASE("intent_testset picks the latest auxiliary between the last two purchases") {
    Vocab vocab = synthetic_vocab(9, 3, 3);
    SECTION("basic pick") {
        // history: ... buy X, click C, fav D  (then the real test target buy Y)
        EvalSample s;
        s.user = "u";
        s.history = {{1, 1, 10, 0}, {2, 3, 20, 1}, {3, 1, 30, 2}, {4, 2, 40, 3}};
        s.target_item = 5;
        s.target_ts = 50;
        s.target_ord = 4;
        auto alt = intent_testset({s}, vocab);
        REQUIRE(alt.size() == 1);
        CHECK(alt[0].target_item == 4); // the favorite at ts=40 is the latest auxiliary
        CHECK(alt[0].history.size() == 3);
    }
    SECTION("no auxiliary between the purchases excludes the user") {
        EvalSample s;
        s.user = "u";
        s.history = {{1, 1, 10, 0}, {2, 3, 20, 1}}; // click, then penultimate buy, nothing after
        s.target_item = 5;
        CHECK_THROWS_AS(intent_testset({s}, vocab), InvalidInputError);
    }
}

TEST_CASE("bench_scaling: constant-time stub has flat ratios and slope") {
    auto factory = [](std::size_t) {
        return std::function<void()>([] {
            volatile double x = 0;
            for (int i = 0; i < 1500000; ++i) x = x + 1.0;
        });
    };
    TimingCurve curve = bench_scaling(factory, {64, 128, 256}, 30, 5);
    REQUIRE(curve.ratio_2x.size() == 2);
    for (double r : curve.ratio_2x) {
        CHECK(r > 0.6);
        CHECK(r < 1.4);
    }
}
