#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bmlp/data.hpp"
#include "bmlp/model.hpp"

namespace bmlp {

using json = nlohmann::json;

struct DataConfig {
    std::string input;
    FileFormat format = FileFormat::tsv;
    bool has_header = false;
    ColumnMap columns;
    std::string target_behavior = "buy";
    std::size_t min_item_purchases = 5;
    std::size_t min_user_purchases = 5;
    std::optional<RatingSimulation> rating_simulation;
    std::vector<std::pair<std::int64_t, std::int64_t>> exclude_time_ranges;
};

struct TrainConfig {
    std::size_t eval_every = 1;
};

struct EvalConfig {
    std::vector<std::size_t> ks = {10, 20};
    bool groups = true;
    bool intent = false;
};

struct SweepConfig {
    std::vector<std::size_t> heads;
    std::vector<std::size_t> aux_len;
    std::vector<std::size_t> blocks;
    std::vector<std::size_t> embed_dim;
    std::vector<double> lr;
    std::vector<double> dropout;
};

struct BenchConfig {
    std::vector<std::size_t> lengths = {64, 128, 256, 512};
    std::size_t repetitions = 100;
    std::size_t warmup = 10;
    std::size_t embed_dim = 32;
    std::size_t seq_hidden = 64;
    std::size_t feat_hidden = 64;
    std::size_t heads = 2;
    std::size_t blocks = 2;
    std::size_t items = 500;
    std::size_t control_width = 768;
    bool float32 = false;
    bool quadratic_control = true;
};

struct RunConfig {
    DataConfig data;
    HyperParams model;
    TrainConfig train;
    EvalConfig eval;
    SweepConfig sweep;
    BenchConfig bench;
    std::string split_dir;
    std::string checkpoint;
    std::string out = "out";
    unsigned threads = 0; // 0 = hardware concurrency
    bool model_section_present = false;

    void validate_common() const {
        model.validate();
        if (data.min_item_purchases < 1 || data.min_user_purchases < 1)
            throw ConfigError("purchase-count thresholds must be >= 1");
        if (out.empty()) throw ConfigError("output directory must not be empty");
        for (std::size_t k : eval.ks)
            if (k < 1) throw ConfigError("metric cutoffs must be >= 1");
    }
};

namespace detail {

template <class T>
void get_to_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

/// Shortest round-trip decimal form, identical on every platform (delegates
/// to the JSON serializer). Keeps TSV reports byte-reproducible.
inline std::string format_double(double v) { return json(v).dump(); }

inline Variant parse_variant(const std::string& s) {
    if (s == "S") return Variant::S;
    if (s == "B") return Variant::B;
    if (s == "T") return Variant::T;
    if (s == "BT") return Variant::BT;
    throw ConfigError(detail::cat("unknown variant '", s, "' (expected S, B, T or BT)"));
}

inline Ablation parse_ablation(const json& arr) {
    Ablation a;
    for (const auto& v : arr) {
        const std::string s = v.get<std::string>();
        if (s == "no_scb")
            a.no_scb = true;
        else if (s == "no_fcb")
            a.no_fcb = true;
        else if (s == "no_pip")
            a.no_pip = true;
        else if (s == "no_hip")
            a.no_hip = true;
        else
            throw ConfigError(detail::cat("unknown ablation '", s, "'"));
    }
    return a;
}

inline json ablation_to_json(const Ablation& a) {
    json arr = json::array();
    if (a.no_scb) arr.push_back("no_scb");
    if (a.no_fcb) arr.push_back("no_fcb");
    if (a.no_pip) arr.push_back("no_pip");
    if (a.no_hip) arr.push_back("no_hip");
    return arr;
}

} // namespace detail

inline void parse_model_section(const json& m, HyperParams& hp) {
    detail::get_to_if(m, "embed_dim", hp.embed_dim);
    detail::get_to_if(m, "seq_len", hp.seq_len);
    detail::get_to_if(m, "aux_len", hp.aux_len);
    detail::get_to_if(m, "seq_hidden", hp.seq_hidden);
    detail::get_to_if(m, "feat_hidden", hp.feat_hidden);
    detail::get_to_if(m, "aux_seq_hidden", hp.aux_seq_hidden);
    detail::get_to_if(m, "heads", hp.heads);
    detail::get_to_if(m, "blocks", hp.blocks);
    if (m.contains("variant")) hp.variant = detail::parse_variant(m.at("variant").get<std::string>());
    if (m.contains("ablation")) hp.ablation = detail::parse_ablation(m.at("ablation"));
    if (m.contains("score_activation")) {
        const std::string s = m.at("score_activation").get<std::string>();
        if (s == "softmax")
            hp.score_activation = ScoreActivation::softmax;
        else if (s == "sigmoid")
            hp.score_activation = ScoreActivation::sigmoid;
        else
            throw ConfigError(detail::cat("unknown score activation '", s, "'"));
    }
    detail::get_to_if(m, "pip_scb_residual", hp.pip_scb_residual);
    detail::get_to_if(m, "pip_mean_excludes_padded", hp.pip_mean_excludes_padded);
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(detail::cat("cannot read config file '", path.string(), "'"));
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(detail::cat("config '", path.string(), "' is not valid JSON: ", e.what()));
    }
    RunConfig cfg;
    if (j.contains("data")) {
        const json& d = j.at("data");
        detail::get_to_if(d, "input", cfg.data.input);
        if (d.contains("format")) {
            const std::string f = d.at("format").get<std::string>();
            if (f == "tsv")
                cfg.data.format = FileFormat::tsv;
            else if (f == "csv")
                cfg.data.format = FileFormat::csv;
            else
                throw ConfigError(detail::cat("unknown input format '", f, "'"));
        }
        detail::get_to_if(d, "has_header", cfg.data.has_header);
        if (d.contains("columns")) {
            const json& c = d.at("columns");
            detail::get_to_if(c, "user", cfg.data.columns.user);
            detail::get_to_if(c, "item", cfg.data.columns.item);
            detail::get_to_if(c, "behavior", cfg.data.columns.behavior);
            detail::get_to_if(c, "timestamp", cfg.data.columns.timestamp);
        }
        detail::get_to_if(d, "target_behavior", cfg.data.target_behavior);
        detail::get_to_if(d, "min_item_purchases", cfg.data.min_item_purchases);
        detail::get_to_if(d, "min_user_purchases", cfg.data.min_user_purchases);
        if (d.contains("rating_simulation") && !d.at("rating_simulation").is_null()) {
            const json& r = d.at("rating_simulation");
            RatingSimulation sim;
            detail::get_to_if(r, "threshold", sim.threshold);
            detail::get_to_if(r, "target_name", sim.target_name);
            detail::get_to_if(r, "aux_name", sim.aux_name);
            cfg.data.rating_simulation = sim;
        }
        if (d.contains("exclude_time_ranges"))
            for (const auto& pr : d.at("exclude_time_ranges"))
                cfg.data.exclude_time_ranges.push_back({pr.at(0).get<std::int64_t>(), pr.at(1).get<std::int64_t>()});
    }
    if (j.contains("model")) {
        cfg.model_section_present = true;
        parse_model_section(j.at("model"), cfg.model);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        detail::get_to_if(t, "lr", cfg.model.lr);
        detail::get_to_if(t, "batch_size", cfg.model.batch_size);
        detail::get_to_if(t, "dropout", cfg.model.dropout_rate);
        detail::get_to_if(t, "weight_decay", cfg.model.weight_decay);
        detail::get_to_if(t, "epochs", cfg.model.epochs);
        detail::get_to_if(t, "patience", cfg.model.patience);
        detail::get_to_if(t, "eval_every", cfg.train.eval_every);
        detail::get_to_if(t, "train_all_targets", cfg.model.train_all_targets);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        detail::get_to_if(e, "ks", cfg.eval.ks);
        detail::get_to_if(e, "groups", cfg.eval.groups);
        detail::get_to_if(e, "intent", cfg.eval.intent);
    }
    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        detail::get_to_if(s, "heads", cfg.sweep.heads);
        detail::get_to_if(s, "aux_len", cfg.sweep.aux_len);
        detail::get_to_if(s, "blocks", cfg.sweep.blocks);
        detail::get_to_if(s, "embed_dim", cfg.sweep.embed_dim);
        detail::get_to_if(s, "lr", cfg.sweep.lr);
        detail::get_to_if(s, "dropout", cfg.sweep.dropout);
    }
    if (j.contains("bench")) {
        const json& b = j.at("bench");
        detail::get_to_if(b, "lengths", cfg.bench.lengths);
        detail::get_to_if(b, "repetitions", cfg.bench.repetitions);
        detail::get_to_if(b, "warmup", cfg.bench.warmup);
        detail::get_to_if(b, "embed_dim", cfg.bench.embed_dim);
        detail::get_to_if(b, "seq_hidden", cfg.bench.seq_hidden);
        detail::get_to_if(b, "feat_hidden", cfg.bench.feat_hidden);
        detail::get_to_if(b, "heads", cfg.bench.heads);
        detail::get_to_if(b, "blocks", cfg.bench.blocks);
        detail::get_to_if(b, "items", cfg.bench.items);
        detail::get_to_if(b, "control_width", cfg.bench.control_width);
        detail::get_to_if(b, "float32", cfg.bench.float32);
        detail::get_to_if(b, "quadratic_control", cfg.bench.quadratic_control);
    }
    detail::get_to_if(j, "split_dir", cfg.split_dir);
    detail::get_to_if(j, "checkpoint", cfg.checkpoint);
    detail::get_to_if(j, "out", cfg.out);
    detail::get_to_if(j, "seed", cfg.model.seed);
    detail::get_to_if(j, "threads", cfg.threads);
    return cfg;
}

/// Full echo of the effective configuration; paths reduced to basenames so
/// manifests do not depend on where the tree is checked out.
inline json config_to_json(const RunConfig& cfg) {
    json j;
    j["data"] = {
        {"input", std::filesystem::path(cfg.data.input).filename().string()},
        {"format", cfg.data.format == FileFormat::tsv ? "tsv" : "csv"},
        {"has_header", cfg.data.has_header},
        {"columns",
         {{"user", cfg.data.columns.user},
          {"item", cfg.data.columns.item},
          {"behavior", cfg.data.columns.behavior},
          {"timestamp", cfg.data.columns.timestamp}}},
        {"target_behavior", cfg.data.target_behavior},
        {"min_item_purchases", cfg.data.min_item_purchases},
        {"min_user_purchases", cfg.data.min_user_purchases},
    };
    if (cfg.data.rating_simulation) {
        j["data"]["rating_simulation"] = {{"threshold", cfg.data.rating_simulation->threshold},
                                          {"target_name", cfg.data.rating_simulation->target_name},
                                          {"aux_name", cfg.data.rating_simulation->aux_name}};
    }
    if (!cfg.data.exclude_time_ranges.empty()) {
        json arr = json::array();
        for (const auto& [a, b] : cfg.data.exclude_time_ranges) arr.push_back(json::array({a, b}));
        j["data"]["exclude_time_ranges"] = arr;
    }
    const HyperParams& hp = cfg.model;
    j["model"] = {
        {"embed_dim", hp.embed_dim},
        {"seq_len", hp.seq_len},
        {"aux_len", hp.aux_len},
        {"seq_hidden", hp.seq_hidden_v()},
        {"feat_hidden", hp.feat_hidden_v()},
        {"aux_seq_hidden", hp.aux_seq_hidden_v()},
        {"heads", hp.heads},
        {"blocks", hp.blocks},
        {"variant", variant_name(hp.variant)},
        {"ablation", detail::ablation_to_json(hp.ablation)},
        {"score_activation", hp.score_activation == ScoreActivation::softmax ? "softmax" : "sigmoid"},
        {"pip_scb_residual", hp.pip_scb_residual},
        {"pip_mean_excludes_padded", hp.pip_mean_excludes_padded},
    };
    j["train"] = {
        {"lr", hp.lr},
        {"batch_size", hp.batch_size},
        {"dropout", hp.dropout_rate},
        {"weight_decay", hp.weight_decay},
        {"epochs", hp.epochs},
        {"patience", hp.patience},
        {"eval_every", cfg.train.eval_every},
        {"train_all_targets", hp.train_all_targets},
    };
    j["eval"] = {{"ks", cfg.eval.ks}, {"groups", cfg.eval.groups}, {"intent", cfg.eval.intent}};
    j["seed"] = hp.seed;
    return j;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw DataError(detail::cat("cannot write '", path.string(), "'"));
    out << text;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace bmlp
