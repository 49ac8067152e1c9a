#include <CLI11.hpp>

#include <iostream>

#include "bmlp/cli.hpp"

namespace {

struct CommonFlags {
    std::string config;
    std::string out;
    std::string split;
    std::string checkpoint;
    std::string input;
    std::int64_t seed = -1;
    int threads = -1;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "JSON configuration file");
    cmd->add_option("--out", f.out, "output directory (overrides config)");
    cmd->add_option("--seed", f.seed, "random seed (overrides config)");
    cmd->add_option("--threads", f.threads, "worker cap, 0 = all cores (overrides config)");
    cmd->add_option("--split", f.split, "split directory (overrides config)");
}

bmlp::RunConfig make_config(const CommonFlags& f) {
    bmlp::RunConfig cfg;
    if (!f.config.empty()) cfg = bmlp::load_config(f.config);
    if (!f.out.empty()) cfg.out = f.out;
    if (!f.split.empty()) cfg.split_dir = f.split;
    if (!f.checkpoint.empty()) cfg.checkpoint = f.checkpoint;
    if (!f.input.empty()) cfg.data.input = f.input;
    if (f.seed >= 0) cfg.model.seed = static_cast<std::uint64_t>(f.seed);
    if (f.threads >= 0) cfg.threads = static_cast<unsigned>(f.threads);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"bmlp: behavior-aware MLP for heterogeneous sequential recommendation"};
    app.require_subcommand(1);

    CommonFlags pre_f, train_f, eval_f, abl_f, sweep_f, bench_f;
    bool eval_intent = false;
    bool bench_f32 = false;

    auto* pre = app.add_subcommand("preprocess", "ingest raw logs, filter, and write the split directory");
    add_common(pre, pre_f);
    pre->add_option("--input", pre_f.input, "raw interaction log (overrides config)");

    auto* train = app.add_subcommand("train", "train a model on a split directory");
    add_common(train, train_f);
    train->add_option("--checkpoint", train_f.checkpoint, "checkpoint output path (overrides config)");

    auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
    add_common(eval, eval_f);
    eval->add_option("--checkpoint", eval_f.checkpoint, "checkpoint to evaluate (overrides config)");
    eval->add_flag("--intent", eval_intent, "also evaluate the auxiliary-intent test split");

    auto* abl = app.add_subcommand("ablate", "train and evaluate every ablation x variant cell");
    add_common(abl, abl_f);

    auto* sweep = app.add_subcommand("sweep", "grid search, selecting the best validation HR@10");
    add_common(sweep, sweep_f);

    auto* bench = app.add_subcommand("bench", "window-length scaling benchmark");
    add_common(bench, bench_f);
    bench->add_flag("--float32", bench_f32, "run the benchmark in 32-bit floats");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pre->parsed()) {
            bmlp::cmd_preprocess(make_config(pre_f));
        } else if (train->parsed()) {
            bmlp::cmd_train(make_config(train_f));
        } else if (eval->parsed()) {
            bmlp::RunConfig cfg = make_config(eval_f);
            if (eval_intent) cfg.eval.intent = true;
            bmlp::cmd_evaluate(cfg);
        } else if (abl->parsed()) {
            bmlp::cmd_ablate(make_config(abl_f));
        } else if (sweep->parsed()) {
            bmlp::cmd_sweep(make_config(sweep_f));
        } else if (bench->parsed()) {
            bmlp::RunConfig cfg = make_config(bench_f);
            if (bench_f32) cfg.bench.float32 = true;
            bmlp::cmd_bench(cfg);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
