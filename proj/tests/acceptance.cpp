// Acceptance suite: runs every release criterion at its pinned tolerance and
// prints one PASS/FAIL line per criterion. Exits nonzero if any fail.

#include <algorithm>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "bmlp/bench.hpp"
#include "bmlp/cli.hpp"

using namespace bmlp;
namespace fs = std::filesystem;

#ifndef BMLP_SOURCE_DIR
#error "BMLP_SOURCE_DIR must point at the repository root"
#endif

namespace {

const fs::path kRepo = BMLP_SOURCE_DIR;
int g_failures = 0;

void report(int criterion, const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << "criterion " << criterion << ": " << name;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << std::endl;
    if (!pass) ++g_failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
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

TrainingInstance random_instance(const HyperParams& hp, const Vocab& vocab, RngStream& rng) {
    const std::size_t n_events = 1 + rng.below(hp.seq_len + 3);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> history;
    for (std::size_t k = 0; k < n_events; ++k)
        history.push_back({static_cast<std::uint32_t>(1 + rng.below(vocab.n_items())),
                           static_cast<std::uint32_t>(1 + rng.below(vocab.n_behaviors()))});
    TrainingInstance inst;
    inst.id = "synthetic";
    inst.target_item = static_cast<std::uint32_t>(1 + rng.below(vocab.n_items()));
    const std::size_t keep = std::min(hp.seq_len, history.size());
    inst.hetero.items.assign(hp.seq_len, 0);
    inst.hetero.behaviors.assign(hp.seq_len, 0);
    inst.hetero.mask.assign(hp.seq_len, 0);
    for (std::size_t k = 0; k < keep; ++k) {
        const auto& [item, beh] = history[history.size() - keep + k];
        const std::size_t pos = hp.seq_len - keep + k;
        inst.hetero.items[pos] = item;
        inst.hetero.behaviors[pos] = beh;
        inst.hetero.mask[pos] = 1;
    }
    inst.hetero.target_item = inst.target_item;
    inst.aux = extract_aux(history, hp.aux_len, vocab);
    return inst;
}

HyperParams tiny_config() {
    // |I|=20, |B|=3, L=8, L'=3, d=4, d_t=8, d_c=8, H=2, N=1.
    HyperParams hp;
    hp.embed_dim = 4;
    hp.seq_len = 8;
    hp.aux_len = 3;
    hp.seq_hidden = 8;
    hp.feat_hidden = 8;
    hp.aux_seq_hidden = 3;
    hp.heads = 2;
    hp.blocks = 1;
    hp.dropout_rate = 0.25; // train mode with frozen masks in the check
    hp.weight_decay = 0.0;
    return hp;
}

// ---------------------------------------------------------------------------

void criterion_1_gradient_fidelity() {
    const auto t0 = std::chrono::steady_clock::now();
    HyperParams hp = tiny_config();
    Vocab vocab = synthetic_vocab(20, 3, 3);
    ModelParams params(hp, 20, 3, RngStream(11));
    RngStream rng(2024);
    std::vector<TrainingInstance> batch;
    for (int i = 0; i < 2; ++i) batch.push_back(random_instance(hp, vocab, rng));

    const RngStream step_stream(909);
    auto loss_fn = [&] {
        double total = 0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            RngStream inst_rng = step_stream.fork(i);
            Tensor probs = model_forward(batch[i], params, Mode::train, inst_rng);
            total += bce_loss(probs, batch[i].target_item - 1) / batch.size();
        }
        return total;
    };
    params.zero_grads();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        RngStream inst_rng = step_stream.fork(i);
        ForwardCache<double> cache;
        model_forward(batch[i], params, Mode::train, inst_rng, &cache);
        model_backward(batch[i], params, cache, 1.0 / batch.size());
    }
    auto refs = params.param_refs();
    GradCheckReport rep = grad_check<double>(loss_fn, refs, 1e-5, 20, RngStream(55));
    const double elapsed = seconds_since(t0);
    const bool pass = rep.max_rel_err < 1e-4 && elapsed < 60.0;
    report(1, "gradient fidelity on the tiny configuration", pass,
           detail::cat("max rel err ", rep.max_rel_err, " (worst: ", rep.worst_param, "), ", refs.size(),
                       " tensors, ", elapsed, " s"));
}

void criterion_2_normalization_invariants() {
    HyperParams hp = tiny_config();
    hp.dropout_rate = 0.0;
    Vocab vocab = synthetic_vocab(20, 3, 3);
    ModelParams params(hp, 20, 3, RngStream(21));
    RngStream rng(333);
    double worst_score_sum = 0, worst_alpha_sum = 0;
    bool gate_ok = true;
    for (int rep_i = 0; rep_i < 1000; ++rep_i) {
        TrainingInstance inst = random_instance(hp, vocab, rng);
        RngStream r(static_cast<std::uint64_t>(rep_i));
        ForwardCache<double> cache;
        Tensor probs = model_forward(inst, params, Mode::eval, r, &cache);
        double ssum = 0;
        for (double v : probs.data) ssum += v;
        worst_score_sum = std::max(worst_score_sum, std::abs(ssum - 1.0));
        double asum = 0;
        for (std::size_t t = 0; t < cache.hip.pool.alpha.size(); ++t)
            if (cache.hip.pool.mask[t]) asum += cache.hip.pool.alpha[t];
        worst_alpha_sum = std::max(worst_alpha_sum, std::abs(asum - 1.0));
        for (double g : cache.gate.g.data) gate_ok &= g > 0.0 && g < 1.0;
    }
    const bool pass = worst_score_sum < 1e-9 && worst_alpha_sum < 1e-9 && gate_ok;
    report(2, "score/alpha normalization and gate bounds over 1000 passes", pass,
           detail::cat("|score sum - 1| <= ", worst_score_sum, ", |alpha sum - 1| <= ", worst_alpha_sum,
                       ", gate in (0,1): ", gate_ok ? "yes" : "no"));
}

void criterion_3_residual_identity() {
    RngStream rng(77);
    bool bit_ok = true;
    double worst = 0.0;
    for (int rep_i = 0; rep_i < 100; ++rep_i) {
        ScbWeightsT<double> scb(5, 4, 8, rng);
        scb.w2.value.set_zero();
        Tensor x = Tensor::random_uniform(5, 8, -2, 2, rng);
        Tensor y = scb_forward(x, scb);
        bit_ok &= std::memcmp(x.data.data(), y.data.data(), x.numel() * sizeof(double)) == 0;
        worst = std::max(worst, max_abs_diff(x, y));

        FcbWeightsT<double> fcb(8, 5, 2, rng);
        fcb.w_o.value.set_zero();
        Tensor x2 = Tensor::random_uniform(4, 8, -2, 2, rng);
        Tensor y2 = fcb_forward(x2, fcb);
        bit_ok &= std::memcmp(x2.data.data(), y2.data.data(), x2.numel() * sizeof(double)) == 0;
        worst = std::max(worst, max_abs_diff(x2, y2));

        PipBlockWeightsT<double> pip(2, 3, 3, 8, 4, 2, rng);
        pip.fcb.w_o.value.set_zero();
        std::vector<Tensor> h{Tensor::random_uniform(3, 8, -2, 2, rng), Tensor::random_uniform(3, 8, -2, 2, rng)};
        auto out = pip_block_forward(h, pip, PipOptions{});
        for (std::size_t j = 0; j < h.size(); ++j) {
            bit_ok &= std::memcmp(h[j].data.data(), out[j].data.data(), h[j].numel() * sizeof(double)) == 0;
            worst = std::max(worst, max_abs_diff(h[j], out[j]));
        }
    }
    const bool pass = bit_ok && worst < 1e-12;
    report(3, "residual identities with zeroed projections (100 inputs each)", pass,
           detail::cat("bit-level equality: ", bit_ok ? "yes" : "no", ", max deviation ", worst));
}

void criterion_4_metric_oracle() {
    RngStream rng(404);
    bool ok = true;
    std::string why;
    for (int rep_i = 0; rep_i < 1000 && ok; ++rep_i) {
        const std::size_t n = 5 + rng.below(46); // |I| <= 50
        std::vector<double> scores(n);
        for (auto& v : scores) v = rng.uniform(-1, 1);
        if (rep_i % 4 == 0)
            for (std::size_t j = 0; j + 1 < n; j += 2) scores[j + 1] = scores[j]; // planted ties
        // Oracle: full sort with the ascending-index tie-break.
        std::vector<std::size_t> idx(n);
        for (std::size_t j = 0; j < n; ++j) idx[j] = j;
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return a < b;
        });
        std::vector<std::size_t> oracle_rank(n);
        for (std::size_t r = 0; r < n; ++r) oracle_rank[idx[r]] = r + 1;

        std::vector<std::size_t> ranks, oracle_ranks;
        for (std::size_t t = 0; t < n; ++t) {
            ranks.push_back(rank_of_target(scores, t));
            oracle_ranks.push_back(oracle_rank[t]);
        }
        if (ranks != oracle_ranks) {
            ok = false;
            why = "rank mismatch against the full-sort oracle";
            break;
        }
        for (std::size_t k : {std::size_t{10}, std::size_t{20}}) {
            // Direct-formula oracle over the oracle ranks.
            double hr_oracle = 0, ndcg_oracle = 0;
            for (std::size_t r : oracle_ranks) {
                if (r <= k) {
                    hr_oracle += 1.0;
                    ndcg_oracle += 1.0 / std::log2(static_cast<double>(r) + 1.0);
                }
            }
            hr_oracle /= static_cast<double>(n);
            ndcg_oracle /= static_cast<double>(n);
            const double hr = hr_at_k(ranks, k);
            const double ndcg = ndcg_at_k(ranks, k);
            if (hr != hr_oracle || ndcg != ndcg_oracle) {
                ok = false;
                why = "metric mismatch against the direct formula";
            }
            if (ndcg > hr) {
                ok = false;
                why = "ndcg exceeded hr";
            }
        }
    }
    report(4, "HR/NDCG equal the brute-force oracle on 1000 score vectors", ok, ok ? "exact match" : why);
}

struct FixtureRun {
    fs::path split_dir;
    RunConfig cfg;
};

FixtureRun preprocess_fixture(const fs::path& out, unsigned threads) {
    RunConfig cfg = load_config(kRepo / "fixtures/mini/config.json");
    cfg.data.input = (kRepo / "fixtures/mini/events.tsv").string();
    cfg.out = out.string();
    cfg.split_dir = (out / "split").string();
    cfg.threads = threads;
    std::ostringstream sink;
    PreprocessOutcome pre = cmd_preprocess(cfg, sink);
    return {pre.split_dir, cfg};
}

void criterion_5_fixture_memorization(const FixtureRun& fixture) {
    const auto t0 = std::chrono::steady_clock::now();
    LoadedSplit loaded = load_split_dir(fixture.split_dir);
    HyperParams hp = fixture.cfg.model;
    hp.epochs = std::min<std::size_t>(hp.epochs, 200);
    hp.patience = 1000; // run the full budget; memorization is the point here
    TrainOptions opts;
    opts.keep_final_params = true;
    TrainResult r = train_model(loaded.split, loaded.vocab, hp, opts);

    auto instances = gen_instances(loaded.split.train, hp, loaded.vocab);
    std::size_t hits = 0;
    for (const auto& inst : instances) {
        RngStream rng(0);
        Tensor probs = model_forward(inst, r.params, Mode::eval, rng);
        std::vector<double> scores(probs.data.begin(), probs.data.end());
        if (rank_of_target(scores, inst.target_item - 1) == 1) ++hits;
    }
    const double train_hr1 = static_cast<double>(hits) / static_cast<double>(instances.size());
    EvalOutcome test = evaluate(r.params, loaded.split.test, loaded.vocab, {10});
    const double elapsed = seconds_since(t0);
    const bool pass = train_hr1 >= 0.95 && test.report.hr[0] >= 0.8 && elapsed < 300.0;
    report(5, "fixture memorization within 200 epochs", pass,
           detail::cat("train HR@1 ", train_hr1, " (need >= 0.95), test HR@10 ", test.report.hr[0],
                       " (need >= 0.8), ", r.log.size(), " epochs, ", elapsed, " s"));
}

void criterion_6_ablation_direction(const FixtureRun& fixture) {
    LoadedSplit loaded = load_split_dir(fixture.split_dir);
    int bt_wins = 0;
    std::ostringstream detail_str;
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        double hr[2] = {0, 0};
        int slot = 0;
        for (Variant v : {Variant::BT, Variant::S}) {
            HyperParams hp = fixture.cfg.model;
            hp.variant = v;
            hp.seed = seed;
            hp.patience = 1000;
            TrainResult r = train_model(loaded.split, loaded.vocab, hp, {});
            hr[slot++] = r.best_val_hr10;
        }
        const bool bt_ge = hr[0] >= hr[1];
        bt_wins += bt_ge;
        detail_str << "seed " << seed << ": BT " << hr[0] << (bt_ge ? " >= " : " < ") << "S " << hr[1] << "; ";
    }
    const bool pass = bt_wins >= 2;
    report(6, "behavior information helps: BT >= S on validation (majority of 3 seeds)", pass,
           detail_str.str() + detail::cat(bt_wins, "/3 seeds"));
}

void criterion_7_linear_scaling() {
    const auto t0 = std::chrono::steady_clock::now();
    BenchModelConfig bc;
    auto factory = [&](bool quadratic) {
        return std::function<std::function<void()>(std::size_t)>(
            [bc, quadratic](std::size_t L) { return make_bench_step<double>(bc, L, quadratic); });
    };
    const std::vector<std::size_t> lengths{64, 128, 256, 512};
    TimingCurve model_curve = bench_scaling(factory(false), lengths, 100, 10);
    TimingCurve control_curve = bench_scaling(factory(true), lengths, 100, 10);
    bool model_ok = true;
    for (double r : model_curve.ratio_2x) model_ok &= r >= 1.6 && r <= 2.6;
    bool control_ok = false;
    for (double r : control_curve.ratio_2x) control_ok |= r > 3.2;
    const double elapsed = seconds_since(t0);
    std::ostringstream ds;
    ds << "model ratios";
    for (double r : model_curve.ratio_2x) ds << " " << r;
    ds << " (need [1.6, 2.6]); control ratios";
    for (double r : control_curve.ratio_2x) ds << " " << r;
    ds << " (need one > 3.2); " << elapsed << " s";
    const bool pass = model_ok && control_ok && elapsed < 600.0;
    report(7, "linear scaling in the window length; quadratic control detected", pass, ds.str());
}

void criterion_8_pipeline_determinism(const FixtureRun& first) {
    // Same inputs again, different output directory and thread count.
    const fs::path out2 = fs::temp_directory_path() / "bmlp_acceptance" / "pre2";
    fs::remove_all(out2);
    fs::create_directories(out2);
    FixtureRun second = preprocess_fixture(out2, 4);

    auto bytes = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    bool identical = true;
    for (const char* f : {"train.bin", "valid.bin", "test.bin", "vocab.bin", "manifest.json"})
        identical &= bytes(first.split_dir / f) == bytes(second.split_dir / f);
    const bool manifest_matches =
        bytes(first.split_dir / "manifest.json") == bytes(kRepo / "fixtures/mini/expected_manifest.json");
    const bool pass = identical && manifest_matches;
    report(8, "preprocess reproduces the committed manifest; byte-identical across runs and threads", pass,
           detail::cat("rerun identical: ", identical ? "yes" : "no",
                       ", matches committed manifest: ", manifest_matches ? "yes" : "no"));
}

void criterion_9_checkpoint_roundtrip(const FixtureRun& fixture) {
    LoadedSplit loaded = load_split_dir(fixture.split_dir);
    HyperParams hp = fixture.cfg.model;
    hp.epochs = 10;
    TrainResult r = train_model(loaded.split, loaded.vocab, hp, {});

    const fs::path dir = fs::temp_directory_path() / "bmlp_acceptance" / "ckpt";
    fs::create_directories(dir);
    const fs::path path = dir / "model.ckpt";
    save_checkpoint(r.params, loaded.vocab, path);
    Checkpoint ck = load_checkpoint(path);

    bool bits_ok = true;
    auto ra = r.params.param_refs();
    auto rb = ck.params.param_refs();
    bits_ok &= ra.size() == rb.size();
    for (std::size_t i = 0; i < ra.size() && bits_ok; ++i)
        bits_ok &= std::memcmp(ra[i].param->value.data.data(), rb[i].param->value.data.data(),
                               ra[i].param->value.numel() * sizeof(double)) == 0;

    EvalOutcome before = evaluate(r.params, loaded.split.test, loaded.vocab, {10, 20});
    EvalOutcome after = evaluate(ck.params, loaded.split.test, loaded.vocab, {10, 20});
    const std::string rep_before = report_to_json(before.report).dump(2);
    const std::string rep_after = report_to_json(after.report).dump(2);
    const bool report_ok = rep_before == rep_after && before.ranks == after.ranks;
    const bool pass = bits_ok && report_ok;
    report(9, "checkpoint round trip is bit-exact and reproduces the evaluation report", pass,
           detail::cat("tensors bit-equal: ", bits_ok ? "yes" : "no",
                       ", report byte-identical: ", report_ok ? "yes" : "no"));
}

void criterion_10_no_leakage(const FixtureRun& fixture) {
    LoadedSplit loaded = load_split_dir(fixture.split_dir);
    const std::size_t fixture_violations = audit_no_leakage(loaded.split, fixture.cfg.model, loaded.vocab);

    // Randomized secondary dataset with timestamp ties and duplicates.
    RngStream rng(9090);
    std::vector<InteractionRecord> rs;
    for (int u = 0; u < 15; ++u) {
        std::int64_t t = 1000 * u;
        const int n = 8 + static_cast<int>(rng.below(10));
        for (int k = 0; k < n; ++k) {
            t += static_cast<std::int64_t>(rng.below(3)); // frequent ties
            rs.push_back({"u" + std::to_string(u), "i" + std::to_string(rng.below(10)),
                          rng.uniform() < 0.45 ? "buy" : (rng.uniform() < 0.5 ? "click" : "fav"), t});
        }
    }
    rs = dedup_earliest(rs).records;
    Vocab vocab = build_vocab(rs, "buy");
    DatasetSplit split = split_dataset(group_users(rs, vocab), vocab);
    HyperParams hp;
    hp.embed_dim = 4;
    hp.seq_len = 6;
    hp.aux_len = 3;
    const std::size_t random_violations = audit_no_leakage(split, hp, vocab);

    const bool pass = fixture_violations == 0 && random_violations == 0;
    report(10, "no-leakage audit over training instances and held-out histories", pass,
           detail::cat("fixture violations: ", fixture_violations, ", randomized-data violations: ",
                       random_violations));
}

} // namespace

int main() {
    std::cout << "bmlp acceptance suite (" << kVersion << ")\n";
    const auto t0 = std::chrono::steady_clock::now();

    const fs::path base = fs::temp_directory_path() / "bmlp_acceptance";
    fs::remove_all(base);
    fs::create_directories(base);

    try {
        criterion_1_gradient_fidelity();
        criterion_2_normalization_invariants();
        criterion_3_residual_identity();
        criterion_4_metric_oracle();
        FixtureRun fixture = preprocess_fixture(base / "pre1", 1);
        criterion_5_fixture_memorization(fixture);
        criterion_6_ablation_direction(fixture);
        criterion_7_linear_scaling();
        criterion_8_pipeline_determinism(fixture);
        criterion_9_checkpoint_roundtrip(fixture);
        criterion_10_no_leakage(fixture);
    } catch (const std::exception& e) {
        std::cout << "[FAIL] acceptance suite aborted: " << e.what() << std::endl;
        return 2;
    }

    std::cout << (g_failures == 0 ? "all criteria passed" : detail::cat(g_failures, " criteria FAILED"))
              << " in " << seconds_since(t0) << " s" << std::endl;
    return g_failures == 0 ? 0 : 1;
}
