#pragma once

#include <filesystem>

#include "bmlp/io.hpp"
#include "bmlp/model.hpp"
#include "bmlp/vocab.hpp"

namespace bmlp {

inline constexpr char kCheckpointMagic[4] = {'B', 'M', 'L', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_hyper(BinaryWriter& w, const HyperParams& hp) {
    w.u64(hp.embed_dim);
    w.u64(hp.seq_len);
    w.u64(hp.aux_len);
    w.u64(hp.seq_hidden);
    w.u64(hp.feat_hidden);
    w.u64(hp.aux_seq_hidden);
    w.u64(hp.heads);
    w.u64(hp.blocks);
    w.f64(hp.lr);
    w.u64(hp.batch_size);
    w.f64(hp.dropout_rate);
    w.f64(hp.weight_decay);
    w.u8(static_cast<std::uint8_t>(hp.variant));
    std::uint8_t abl = 0;
    abl |= hp.ablation.no_scb ? 1 : 0;
    abl |= hp.ablation.no_fcb ? 2 : 0;
    abl |= hp.ablation.no_pip ? 4 : 0;
    abl |= hp.ablation.no_hip ? 8 : 0;
    w.u8(abl);
    w.u64(hp.epochs);
    w.u64(hp.patience);
    w.u64(hp.seed);
    w.u8(static_cast<std::uint8_t>(hp.score_activation));
    w.u8(hp.pip_scb_residual ? 1 : 0);
    w.u8(hp.pip_mean_excludes_padded ? 1 : 0);
    w.u8(hp.train_all_targets ? 1 : 0);
}

inline HyperParams read_hyper(BinaryReader& r) {
    HyperParams hp;
    hp.embed_dim = r.u64();
    hp.seq_len = r.u64();
    hp.aux_len = r.u64();
    hp.seq_hidden = r.u64();
    hp.feat_hidden = r.u64();
    hp.aux_seq_hidden = r.u64();
    hp.heads = r.u64();
    hp.blocks = r.u64();
    hp.lr = r.f64();
    hp.batch_size = r.u64();
    hp.dropout_rate = r.f64();
    hp.weight_decay = r.f64();
    hp.variant = static_cast<Variant>(r.u8());
    const std::uint8_t abl = r.u8();
    hp.ablation.no_scb = abl & 1;
    hp.ablation.no_fcb = abl & 2;
    hp.ablation.no_pip = abl & 4;
    hp.ablation.no_hip = abl & 8;
    hp.epochs = r.u64();
    hp.patience = r.u64();
    hp.seed = r.u64();
    hp.score_activation = static_cast<ScoreActivation>(r.u8());
    hp.pip_scb_residual = r.u8() != 0;
    hp.pip_mean_excludes_padded = r.u8() != 0;
    hp.train_all_targets = r.u8() != 0;
    return hp;
}

inline void write_vocab(BinaryWriter& w, const Vocab& v) {
    w.u32(static_cast<std::uint32_t>(v.n_items()));
    for (std::size_t i = 1; i <= v.n_items(); ++i) w.str(v.items[i]);
    w.u32(static_cast<std::uint32_t>(v.n_behaviors()));
    for (std::size_t b = 1; b <= v.n_behaviors(); ++b) w.str(v.behaviors[b]);
    w.u32(v.target_behavior);
}

inline Vocab read_vocab(BinaryReader& r) {
    Vocab v;
    v.items.push_back("");
    v.behaviors.push_back("");
    const std::uint32_t ni = r.u32();
    for (std::uint32_t i = 0; i < ni; ++i) {
        std::string s = r.str();
        v.item_index.emplace(s, static_cast<std::uint32_t>(v.items.size()));
        v.items.push_back(std::move(s));
    }
    const std::uint32_t nb = r.u32();
    for (std::uint32_t b = 0; b < nb; ++b) {
        std::string s = r.str();
        v.behavior_index.emplace(s, static_cast<std::uint32_t>(v.behaviors.size()));
        v.behaviors.push_back(std::move(s));
    }
    v.target_behavior = r.u32();
    return v;
}

} // namespace detail

struct Checkpoint {
    HyperParams hyper;
    Vocab vocab;
    ModelParams params;
};

/// Serializes hyperparameters, the vocab, and every tensor (names, shapes,
/// little-endian doubles) in the model's fixed visit order, followed by a
/// CRC32 of everything before it.
inline void save_checkpoint(ModelParams& params, const Vocab& vocab, const std::filesystem::path& path) {
    BinaryWriter w;
    w.raw(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    detail::write_hyper(w, params.hp);
    detail::write_vocab(w, vocab);
    std::uint64_t count = 0;
    params.visit([&](const std::string&, Param&) { ++count; });
    w.u64(count);
    params.visit([&](const std::string& name, Param& p) {
        w.str(name);
        w.u64(p.value.rows());
        w.u64(p.value.cols());
        for (double v : p.value.data) w.f64(v);
    });
    w.finish_with_checksum();
    w.write_file(path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    BinaryReader r = BinaryReader::from_file(path);
    r.check_trailing_checksum("checkpoint");
    char magic[4];
    for (int i = 0; i < 4; ++i) magic[i] = static_cast<char>(r.u8());
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw CheckpointError(CheckpointError::Kind::corrupt_header, "checkpoint: bad magic bytes");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw CheckpointError(CheckpointError::Kind::version_mismatch,
                              detail::cat("checkpoint: format version ", version, ", expected ",
                                          kCheckpointVersion));
    Checkpoint out;
    out.hyper = detail::read_hyper(r);
    out.vocab = detail::read_vocab(r);
    out.params = ModelParams(out.hyper, out.vocab.n_items(), out.vocab.n_behaviors(), RngStream(out.hyper.seed));
    const std::uint64_t count = r.u64();
    std::uint64_t seen = 0;
    out.params.visit([&](const std::string& name, Param& p) {
        const std::string stored = r.str();
        if (stored != name)
            throw CheckpointError(CheckpointError::Kind::corrupt_header,
                                  detail::cat("checkpoint: tensor '", stored, "' where '", name, "' expected"));
        const std::uint64_t rows = r.u64();
        const std::uint64_t cols = r.u64();
        if (rows != p.value.rows() || cols != p.value.cols())
            throw CheckpointError(CheckpointError::Kind::corrupt_header,
                                  detail::cat("checkpoint: tensor '", name, "' has shape [", rows, "x", cols,
                                              "], expected ", p.value.shape_str()));
        for (auto& v : p.value.data) v = r.f64();
        ++seen;
    });
    if (seen != count)
        throw CheckpointError(CheckpointError::Kind::corrupt_header,
                              detail::cat("checkpoint: ", count, " tensors stored, ", seen, " expected"));
    return out;
}

/// Guards commands that pair a checkpoint with an explicit configuration.
inline void require_same_architecture(const HyperParams& checkpoint_hp, const HyperParams& config_hp) {
    if (!checkpoint_hp.architecture_equals(config_hp))
        throw CheckpointError(CheckpointError::Kind::hyper_mismatch,
                              "checkpoint hyperparameters do not match the configured architecture");
}

} // namespace bmlp
