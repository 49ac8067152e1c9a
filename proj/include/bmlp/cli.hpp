#pragma once

#include <filesystem>
#include <iostream>
#include <sstream>

#include "bmlp/bench.hpp"
#include "bmlp/checkpoint.hpp"
#include "bmlp/config.hpp"
#include "bmlp/dataset_io.hpp"
#include "bmlp/eval.hpp"
#include "bmlp/train.hpp"

namespace bmlp {

namespace fs = std::filesystem;

/// A pipeline failure annotated with the stage it happened in.
class PipelineError : public Error {
public:
    PipelineError(const std::string& stage, const std::string& msg)
        : Error(detail::cat("[stage ", stage, "] ", msg)), stage_(stage) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

template <class Fn>
auto run_stage(const std::string& stage, Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        throw PipelineError(stage, e.what());
    }
}

inline json base_manifest(const RunConfig& cfg, const std::string& command) {
    json j;
    j["command"] = command;
    j["version"] = kVersion;
    j["seed"] = cfg.model.seed;
    j["config"] = config_to_json(cfg);
    return j;
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

struct PreprocessOutcome {
    fs::path split_dir;
    json manifest;
};

inline std::size_t distinct_user_count(const std::vector<InteractionRecord>& records) {
    std::unordered_set<std::string> users;
    for (const auto& r : records) users.insert(r.user);
    return users.size();
}

/// ingest -> optional transforms -> dedup -> iterative purchase filter ->
/// vocab -> leave-last-two-purchases split, serialized with a manifest that
/// records the counts at every stage.
inline PreprocessOutcome cmd_preprocess(const RunConfig& cfg, std::ostream& log = std::cout) {
    cfg.validate_common();
    if (cfg.data.input.empty()) throw ConfigError("preprocess: data.input path is required");
    const fs::path split_dir = cfg.split_dir.empty() ? fs::path(cfg.out) / "split" : fs::path(cfg.split_dir);

    IngestOptions iopts;
    iopts.format = cfg.data.format;
    iopts.has_header = cfg.data.has_header;
    iopts.columns = cfg.data.columns;
    IngestResult ingested = run_stage("ingest", [&] { return ingest(cfg.data.input, iopts); });
    log << "ingest: " << ingested.records.size() << " records, " << ingested.malformed << " malformed\n";

    std::vector<InteractionRecord> records = std::move(ingested.records);
    if (cfg.data.rating_simulation)
        records = run_stage("rating-simulation",
                            [&] { return simulate_ratings(std::move(records), *cfg.data.rating_simulation); });
    if (!cfg.data.exclude_time_ranges.empty())
        records = run_stage("time-exclusion",
                            [&] { return exclude_time_ranges(std::move(records), cfg.data.exclude_time_ranges); });
    const std::size_t after_transforms = records.size();

    DedupResult dedup = run_stage("dedup", [&] { return dedup_earliest(records); });
    log << "dedup: removed " << dedup.removed << ", " << dedup.records.size() << " remain\n";

    FilterStats fstats;
    std::vector<InteractionRecord> filtered = run_stage("filter", [&] {
        return iterative_filter(dedup.records, cfg.data.min_item_purchases, cfg.data.min_user_purchases,
                                cfg.data.target_behavior, &fstats);
    });
    log << "filter: " << fstats.rounds << " rounds, removed " << fstats.removed_items << " items / "
        << fstats.removed_users << " users, " << filtered.size() << " records remain\n";

    Vocab vocab = run_stage("vocab", [&] { return build_vocab(filtered, cfg.data.target_behavior); });
    SplitStats sstats;
    DatasetSplit split = run_stage("split", [&] {
        auto users = group_users(filtered, vocab);
        return split_dataset(users, vocab, &sstats, resolve_threads(cfg.threads));
    });
    run_stage("serialize", [&] {
        save_split_dir(split, vocab, split_dir);
        return 0;
    });

    std::size_t train_events = 0;
    for (const auto& u : split.train) train_events += u.events.size();

    json manifest = base_manifest(cfg, "preprocess");
    manifest["input_hash"] = hex64(hash_file(cfg.data.input));
    manifest["stages"] = {
        {"ingested_lines", ingested.total_lines},
        {"malformed", ingested.malformed},
        {"records", ingested.total_lines - ingested.malformed},
        {"after_transforms", after_transforms},
        {"dedup_removed", dedup.removed},
        {"after_dedup", dedup.records.size()},
        {"filter_rounds", fstats.rounds},
        {"filter_removed_items", fstats.removed_items},
        {"filter_removed_users", fstats.removed_users},
        {"after_filter_records", filtered.size()},
        {"users", distinct_user_count(filtered)},
        {"items", vocab.n_items()},
        {"behaviors", vocab.n_behaviors()},
    };
    manifest["split"] = {
        {"users_split", sstats.users_split},
        {"users_excluded_lt2_purchases", sstats.users_excluded_lt2_purchases},
        {"valid_samples", split.valid.size()},
        {"valid_cold_dropped", sstats.valid_cold_dropped},
        {"valid_empty_history_dropped", sstats.valid_empty_history_dropped},
        {"test_samples", split.test.size()},
        {"test_cold_dropped", sstats.test_cold_dropped},
        {"examined_test", sstats.examined_test},
        {"examined_rate",
         split.test.empty() ? 0.0
                            : static_cast<double>(sstats.examined_test) / static_cast<double>(split.test.size())},
        {"train_users", split.train.size()},
        {"train_events", train_events},
    };
    json hashes;
    for (const char* f : {"train.bin", "valid.bin", "test.bin", "vocab.bin"})
        hashes[f] = hex64(hash_file(split_dir / f));
    manifest["output_hashes"] = hashes;
    write_text_file(split_dir / "manifest.json", manifest.dump(2) + "\n");
    log << "split written to " << split_dir.string() << " (" << split.valid.size() << " validation / "
        << split.test.size() << " test samples)\n";
    return {split_dir, manifest};
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOutcome {
    fs::path checkpoint;
    fs::path log_file;
    TrainResult result;
};

inline std::string train_log_text(const std::vector<TrainLogRow>& rows, bool with_elapsed = true) {
    std::ostringstream os;
    os << "epoch\tmean_loss\tval_hr10\tval_ndcg10" << (with_elapsed ? "\telapsed_ms" : "") << "\n";
    for (const auto& r : rows) {
        os << r.epoch << "\t" << detail::format_double(r.mean_loss) << "\t" << detail::format_double(r.val_hr10)
           << "\t" << detail::format_double(r.val_ndcg10);
        if (with_elapsed) os << "\t" << detail::format_double(r.elapsed_ms);
        os << "\n";
    }
    return os.str();
}

inline TrainOutcome cmd_train(const RunConfig& cfg, std::ostream& log = std::cout) {
    cfg.validate_common();
    if (cfg.split_dir.empty()) throw ConfigError("train: split_dir is required");
    LoadedSplit loaded = run_stage("load-split", [&] { return load_split_dir(cfg.split_dir); });

    TrainOptions opts;
    opts.eval_every = cfg.train.eval_every;
    opts.threads = resolve_threads(cfg.threads);
    opts.on_epoch = [&](const TrainLogRow& r) {
        log << "epoch " << r.epoch << ": loss " << r.mean_loss << ", val hr@10 " << r.val_hr10 << " ("
            << r.elapsed_ms << " ms)\n";
    };
    TrainResult result = run_stage("train", [&] { return train_model(loaded.split, loaded.vocab, cfg.model, opts); });

    fs::create_directories(cfg.out);
    const fs::path ckpt = cfg.checkpoint.empty() ? fs::path(cfg.out) / "model.ckpt" : fs::path(cfg.checkpoint);
    save_checkpoint(result.params, loaded.vocab, ckpt);
    const fs::path log_file = fs::path(cfg.out) / "train.log";
    write_text_file(log_file, train_log_text(result.log));

    json manifest = base_manifest(cfg, "train");
    manifest["split_dir_hashes"] = {
        {"train.bin", hex64(hash_file(fs::path(cfg.split_dir) / "train.bin"))},
        {"vocab.bin", hex64(hash_file(fs::path(cfg.split_dir) / "vocab.bin"))},
    };
    manifest["n_instances"] = result.n_instances;
    manifest["epochs_run"] = result.log.size();
    manifest["best_epoch"] = result.best_epoch;
    manifest["best_val_hr10"] = result.best_val_hr10;
    manifest["checkpoint"] = ckpt.filename().string();
    write_text_file(fs::path(cfg.out) / "train_manifest.json", manifest.dump(2) + "\n");
    log << "trained " << result.log.size() << " epochs over " << result.n_instances
        << " instances; best val hr@10 " << result.best_val_hr10 << " at epoch " << result.best_epoch << "\n";
    return {ckpt, log_file, std::move(result)};
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

inline json report_to_json(const EvalReport& rep) {
    json metrics;
    for (std::size_t i = 0; i < rep.ks.size(); ++i) {
        metrics[detail::cat("hr@", rep.ks[i])] = rep.hr[i];
        metrics[detail::cat("ndcg@", rep.ks[i])] = rep.ndcg[i];
    }
    return json{{"group", rep.group}, {"n_samples", rep.n_samples}, {"metrics", metrics}};
}

struct EvaluateOutcome {
    std::map<std::string, EvalReport> reports;
    fs::path out_dir;
};

inline EvaluateOutcome cmd_evaluate(const RunConfig& cfg, std::ostream& log = std::cout) {
    cfg.validate_common();
    if (cfg.split_dir.empty()) throw ConfigError("evaluate: split_dir is required");
    if (cfg.checkpoint.empty()) throw ConfigError("evaluate: checkpoint path is required");
    LoadedSplit loaded = run_stage("load-split", [&] { return load_split_dir(cfg.split_dir); });
    Checkpoint ck = run_stage("load-checkpoint", [&] { return load_checkpoint(cfg.checkpoint); });
    if (cfg.model_section_present) require_same_architecture(ck.hyper, cfg.model);
    if (ck.vocab.items != loaded.vocab.items || ck.vocab.behaviors != loaded.vocab.behaviors)
        throw PipelineError("load-checkpoint", "checkpoint vocabulary does not match the split directory");

    const unsigned threads = resolve_threads(cfg.threads);
    EvaluateOutcome out;
    out.out_dir = cfg.out;
    fs::create_directories(cfg.out);

    EvalOutcome all = run_stage("evaluate", [&] {
        return evaluate(ck.params, loaded.split.test, loaded.vocab, cfg.eval.ks, threads);
    });
    out.reports["all"] = all.report;
    json manifest = base_manifest(cfg, "evaluate");
    manifest["checkpoint_hash"] = hex64(hash_file(cfg.checkpoint));
    json group_sizes;
    group_sizes["all"] = loaded.split.test.size();

    if (cfg.eval.groups) {
        ExaminedGroups groups = group_examined(loaded.split.test);
        group_sizes["examined"] = groups.examined.size();
        group_sizes["unexamined"] = groups.unexamined.size();
        manifest["examined_rate"] = groups.examined_rate;
        if (!groups.examined.empty())
            out.reports["examined"] =
                report_from_ranks(select_ranks(all.ranks, groups.examined), cfg.eval.ks, "examined");
        if (!groups.unexamined.empty())
            out.reports["unexamined"] =
                report_from_ranks(select_ranks(all.ranks, groups.unexamined), cfg.eval.ks, "unexamined");
    }
    if (cfg.eval.intent) {
        auto intent = run_stage("intent-split", [&] { return intent_testset(loaded.split.test, loaded.vocab); });
        EvalOutcome io = evaluate(ck.params, intent, loaded.vocab, cfg.eval.ks, threads);
        io.report.group = "intent";
        out.reports["intent"] = io.report;
        group_sizes["intent"] = intent.size();
    }
    for (const auto& [name, rep] : out.reports) {
        write_text_file(fs::path(cfg.out) / detail::cat("report_", name, ".json"),
                        report_to_json(rep).dump(2) + "\n");
        log << name << ": n=" << rep.n_samples;
        for (std::size_t i = 0; i < rep.ks.size(); ++i)
            log << "  hr@" << rep.ks[i] << "=" << rep.hr[i] << " ndcg@" << rep.ks[i] << "=" << rep.ndcg[i];
        log << "\n";
    }
    manifest["group_sizes"] = group_sizes;
    manifest["wall_time_ms"] = all.report.wall_time_ms;
    write_text_file(fs::path(cfg.out) / "evaluate_manifest.json", manifest.dump(2) + "\n");
    return out;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateRow {
    std::string ablation;
    std::string variant;
    std::size_t params = 0;
    double val_hr10 = 0.0;
    double test_hr10 = 0.0;
    double test_ndcg10 = 0.0;
};

inline std::vector<Ablation> ablation_grid() {
    Ablation full, ns, nf, np, nh;
    ns.no_scb = true;
    nf.no_fcb = true;
    np.no_pip = true;
    nh.no_hip = true;
    return {full, ns, nf, np, nh};
}

inline std::vector<AblateRow> cmd_ablate(const RunConfig& cfg, std::ostream& log = std::cout) {
    cfg.validate_common();
    if (cfg.split_dir.empty()) throw ConfigError("ablate: split_dir is required");
    LoadedSplit loaded = run_stage("load-split", [&] { return load_split_dir(cfg.split_dir); });
    const unsigned threads = resolve_threads(cfg.threads);

    std::vector<AblateRow> rows;
    for (const Ablation& abl : ablation_grid()) {
        for (Variant v : {Variant::S, Variant::B, Variant::T, Variant::BT}) {
            HyperParams hp = cfg.model;
            hp.ablation = abl;
            hp.variant = v;
            TrainOptions opts;
            opts.eval_every = cfg.train.eval_every;
            opts.threads = threads;
            TrainResult r = train_model(loaded.split, loaded.vocab, hp, opts);
            EvalOutcome test = evaluate(r.params, loaded.split.test, loaded.vocab, {10}, threads);
            AblateRow row;
            row.ablation = abl.to_string();
            row.variant = variant_name(v);
            row.params = param_count(hp, loaded.vocab.n_items(), loaded.vocab.n_behaviors());
            row.val_hr10 = r.best_val_hr10;
            row.test_hr10 = test.report.hr[0];
            row.test_ndcg10 = test.report.ndcg[0];
            rows.push_back(row);
            log << row.ablation << " x " << row.variant << ": params " << row.params << ", val hr@10 "
                << row.val_hr10 << ", test hr@10 " << row.test_hr10 << "\n";
        }
    }
    fs::create_directories(cfg.out);
    json arr = json::array();
    std::ostringstream tsv;
    tsv << "ablation\tvariant\tparams\tval_hr10\ttest_hr10\ttest_ndcg10\n";
    for (const auto& r : rows) {
        arr.push_back(json{{"ablation", r.ablation},
                           {"variant", r.variant},
                           {"params", r.params},
                           {"val_hr10", r.val_hr10},
                           {"test_hr10", r.test_hr10},
                           {"test_ndcg10", r.test_ndcg10}});
        tsv << r.ablation << "\t" << r.variant << "\t" << r.params << "\t" << detail::format_double(r.val_hr10)
            << "\t" << detail::format_double(r.test_hr10) << "\t" << detail::format_double(r.test_ndcg10) << "\n";
    }
    json manifest = base_manifest(cfg, "ablate");
    manifest["table"] = arr;
    write_text_file(fs::path(cfg.out) / "ablate_table.json", arr.dump(2) + "\n");
    write_text_file(fs::path(cfg.out) / "ablate_table.tsv", tsv.str());
    write_text_file(fs::path(cfg.out) / "ablate_manifest.json", manifest.dump(2) + "\n");
    return rows;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    HyperParams hp;
    double val_hr10 = 0.0;
    double val_ndcg10 = 0.0;
};

inline std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, std::ostream& log = std::cout) {
    cfg.validate_common();
    if (cfg.split_dir.empty()) throw ConfigError("sweep: split_dir is required");
    LoadedSplit loaded = run_stage("load-split", [&] { return load_split_dir(cfg.split_dir); });
    const unsigned threads = resolve_threads(cfg.threads);

    auto or_default = [](const auto& list, auto fallback) {
        using V = std::decay_t<decltype(fallback)>;
        if (list.empty()) return std::vector<V>{fallback};
        return std::vector<V>(list.begin(), list.end());
    };
    const auto heads = or_default(cfg.sweep.heads, cfg.model.heads);
    const auto aux_lens = or_default(cfg.sweep.aux_len, cfg.model.aux_len);
    const auto blocks = or_default(cfg.sweep.blocks, cfg.model.blocks);
    const auto dims = or_default(cfg.sweep.embed_dim, cfg.model.embed_dim);
    const auto lrs = or_default(cfg.sweep.lr, cfg.model.lr);
    const auto drops = or_default(cfg.sweep.dropout, cfg.model.dropout_rate);

    std::vector<SweepRow> rows;
    for (std::size_t d : dims)
        for (std::size_t b : blocks)
            for (std::size_t h : heads)
                for (std::size_t lp : aux_lens)
                    for (double lr : lrs)
                        for (double drop : drops) {
                            HyperParams hp = cfg.model;
                            hp.embed_dim = d;
                            hp.blocks = b;
                            hp.heads = h;
                            hp.aux_len = lp;
                            hp.lr = lr;
                            hp.dropout_rate = drop;
                            TrainOptions opts;
                            opts.eval_every = cfg.train.eval_every;
                            opts.threads = threads;
                            TrainResult r = train_model(loaded.split, loaded.vocab, hp, opts);
                            SweepRow row;
                            row.hp = hp;
                            row.val_hr10 = r.best_val_hr10;
                            // Recover ndcg at the best epoch from the log.
                            for (const auto& lr_row : r.log)
                                if (lr_row.epoch == r.best_epoch) row.val_ndcg10 = lr_row.val_ndcg10;
                            rows.push_back(row);
                            log << "sweep d=" << d << " N=" << b << " H=" << h << " L'=" << lp << " lr=" << lr
                                << " drop=" << drop << " -> val hr@10 " << row.val_hr10 << "\n";
                        }
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].val_hr10 > rows[best].val_hr10) best = i; // ties keep the earliest grid point

    fs::create_directories(cfg.out);
    std::ostringstream tsv;
    tsv << "embed_dim\tblocks\theads\taux_len\tlr\tdropout\tval_hr10\tval_ndcg10\n";
    json arr = json::array();
    for (const auto& r : rows) {
        tsv << r.hp.embed_dim << "\t" << r.hp.blocks << "\t" << r.hp.heads << "\t" << r.hp.aux_len << "\t"
            << detail::format_double(r.hp.lr) << "\t" << detail::format_double(r.hp.dropout_rate) << "\t"
            << detail::format_double(r.val_hr10) << "\t" << detail::format_double(r.val_ndcg10) << "\n";
        arr.push_back(json{{"embed_dim", r.hp.embed_dim},
                           {"blocks", r.hp.blocks},
                           {"heads", r.hp.heads},
                           {"aux_len", r.hp.aux_len},
                           {"lr", r.hp.lr},
                           {"dropout", r.hp.dropout_rate},
                           {"val_hr10", r.val_hr10},
                           {"val_ndcg10", r.val_ndcg10}});
    }
    write_text_file(fs::path(cfg.out) / "sweep_results.tsv", tsv.str());
    write_text_file(fs::path(cfg.out) / "sweep_results.json", arr.dump(2) + "\n");

    RunConfig best_cfg = cfg;
    best_cfg.model = rows[best].hp;
    json best_json = config_to_json(best_cfg);
    best_json["val_hr10"] = rows[best].val_hr10;
    write_text_file(fs::path(cfg.out) / "best_config.json", best_json.dump(2) + "\n");
    json manifest = base_manifest(cfg, "sweep");
    manifest["grid_points"] = rows.size();
    manifest["best_index"] = best;
    write_text_file(fs::path(cfg.out) / "sweep_manifest.json", manifest.dump(2) + "\n");
    log << "best grid point: index " << best << " with val hr@10 " << rows[best].val_hr10 << "\n";
    return rows;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchOutcome {
    TimingCurve model_curve;
    std::optional<TimingCurve> control_curve;
};

inline std::string plot_data(const TimingCurve& c) {
    std::ostringstream os;
    for (const auto& p : c.points) os << p.length << "\t" << detail::format_double(p.mean_ms) << "\n";
    return os.str();
}

inline json curve_to_json(const TimingCurve& c) {
    json points = json::array();
    for (const auto& p : c.points)
        points.push_back(json{{"length", p.length}, {"mean_ms", p.mean_ms}, {"std_ms", p.std_ms}});
    return json{{"points", points}, {"slope_ms_per_unit", c.slope}, {"intercept_ms", c.intercept},
                {"r2", c.r2},       {"ratio_2x", c.ratio_2x}};
}

inline BenchOutcome cmd_bench(const RunConfig& cfg, std::ostream& log = std::cout) {
    if (cfg.bench.lengths.size() < 4)
        throw ConfigError("bench: at least four window lengths are required");
    BenchModelConfig bc;
    bc.embed_dim = cfg.bench.embed_dim;
    bc.seq_hidden = cfg.bench.seq_hidden;
    bc.feat_hidden = cfg.bench.feat_hidden;
    bc.heads = cfg.bench.heads;
    bc.blocks = cfg.bench.blocks;
    bc.n_items = cfg.bench.items;
    bc.control_width = cfg.bench.control_width;
    bc.seed = cfg.model.seed;

    auto factory = [&](bool quadratic) {
        return std::function<std::function<void()>(std::size_t)>([bc, quadratic, &cfg](std::size_t L) {
            if (cfg.bench.float32) return make_bench_step<float>(bc, L, quadratic);
            return make_bench_step<double>(bc, L, quadratic);
        });
    };

    BenchOutcome out;
    log << "benchmarking model step over lengths";
    for (auto L : cfg.bench.lengths) log << " " << L;
    log << " (" << cfg.bench.repetitions << " reps, " << (cfg.bench.float32 ? "float32" : "float64") << ")\n";
    out.model_curve = bench_scaling(factory(false), cfg.bench.lengths, cfg.bench.repetitions, cfg.bench.warmup);
    for (std::size_t i = 0; i < out.model_curve.points.size(); ++i) {
        const auto& p = out.model_curve.points[i];
        log << "  L=" << p.length << ": " << p.mean_ms << " ms (std " << p.std_ms << ")\n";
    }
    log << "  adjacent-doubling ratios:";
    for (double r : out.model_curve.ratio_2x) log << " " << r;
    log << "\n";

    fs::create_directories(cfg.out);
    write_text_file(fs::path(cfg.out) / "bench_plot.tsv", plot_data(out.model_curve));
    json manifest = base_manifest(cfg, "bench");
    json curves;
    curves["model"] = curve_to_json(out.model_curve);

    if (cfg.bench.quadratic_control) {
        log << "benchmarking the planted quadratic control\n";
        out.control_curve =
            bench_scaling(factory(true), cfg.bench.lengths, cfg.bench.repetitions, cfg.bench.warmup);
        log << "  control ratios:";
        for (double r : out.control_curve->ratio_2x) log << " " << r;
        log << "\n";
        write_text_file(fs::path(cfg.out) / "bench_control_plot.tsv", plot_data(*out.control_curve));
        curves["quadratic_control"] = curve_to_json(*out.control_curve);
    }
    write_text_file(fs::path(cfg.out) / "bench_curve.json", curves.dump(2) + "\n");
    manifest["curves"] = curves;
    write_text_file(fs::path(cfg.out) / "bench_manifest.json", manifest.dump(2) + "\n");
    return out;
}

} // namespace bmlp
