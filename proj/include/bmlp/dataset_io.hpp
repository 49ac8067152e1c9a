#pragma once

#include <filesystem>

#include "bmlp/checkpoint.hpp"
#include "bmlp/data.hpp"
#include "bmlp/io.hpp"

namespace bmlp {

inline constexpr std::uint32_t kSplitFormatVersion = 1;

namespace detail {

inline void write_magic(BinaryWriter& w, const char (&magic)[5]) { w.raw(magic, 4); }

inline void expect_magic(BinaryReader& r, const char (&magic)[5], const char* what) {
    char got[4];
    for (int i = 0; i < 4; ++i) got[i] = static_cast<char>(r.u8());
    if (std::memcmp(got, magic, 4) != 0)
        throw CheckpointError(CheckpointError::Kind::corrupt_header, detail::cat(what, ": bad magic bytes"));
    const std::uint32_t version = r.u32();
    if (version != kSplitFormatVersion)
        throw CheckpointError(CheckpointError::Kind::version_mismatch,
                              detail::cat(what, ": format version ", version, ", expected ", kSplitFormatVersion));
}

inline void write_events(BinaryWriter& w, const std::vector<IndexedEvent>& events) {
    w.u64(events.size());
    for (const auto& e : events) {
        w.u32(e.item);
        w.u32(e.behavior);
        w.i64(e.ts);
        w.u64(e.ord);
    }
}

inline std::vector<IndexedEvent> read_events(BinaryReader& r) {
    const std::uint64_t n = r.u64();
    std::vector<IndexedEvent> events(n);
    for (auto& e : events) {
        e.item = r.u32();
        e.behavior = r.u32();
        e.ts = r.i64();
        e.ord = r.u64();
    }
    return events;
}

} // namespace detail

inline void save_vocab(const Vocab& vocab, const std::filesystem::path& path) {
    BinaryWriter w;
    detail::write_magic(w, "BMVC");
    w.u32(kSplitFormatVersion);
    detail::write_vocab(w, vocab);
    w.finish_with_checksum();
    w.write_file(path);
}

inline Vocab load_vocab(const std::filesystem::path& path) {
    BinaryReader r = BinaryReader::from_file(path);
    r.check_trailing_checksum("vocab");
    detail::expect_magic(r, "BMVC", "vocab");
    return detail::read_vocab(r);
}

inline void save_train_part(const std::vector<UserSeq>& train, const std::filesystem::path& path) {
    BinaryWriter w;
    detail::write_magic(w, "BMTR");
    w.u32(kSplitFormatVersion);
    w.u64(train.size());
    for (const auto& u : train) {
        w.str(u.user);
        detail::write_events(w, u.events);
    }
    w.finish_with_checksum();
    w.write_file(path);
}

inline std::vector<UserSeq> load_train_part(const std::filesystem::path& path) {
    BinaryReader r = BinaryReader::from_file(path);
    r.check_trailing_checksum("train split");
    detail::expect_magic(r, "BMTR", "train split");
    std::vector<UserSeq> out(r.u64());
    for (auto& u : out) {
        u.user = r.str();
        u.events = detail::read_events(r);
    }
    return out;
}

inline void save_eval_part(const std::vector<EvalSample>& samples, const char (&magic)[5],
                           const std::filesystem::path& path) {
    BinaryWriter w;
    detail::write_magic(w, magic);
    w.u32(kSplitFormatVersion);
    w.u64(samples.size());
    for (const auto& s : samples) {
        w.str(s.user);
        w.u32(s.target_item);
        w.i64(s.target_ts);
        w.u64(s.target_ord);
        detail::write_events(w, s.history);
    }
    w.finish_with_checksum();
    w.write_file(path);
}

inline std::vector<EvalSample> load_eval_part(const char (&magic)[5], const std::filesystem::path& path,
                                              const char* what) {
    BinaryReader r = BinaryReader::from_file(path);
    r.check_trailing_checksum(what);
    detail::expect_magic(r, magic, what);
    std::vector<EvalSample> out(r.u64());
    for (auto& s : out) {
        s.user = r.str();
        s.target_item = r.u32();
        s.target_ts = r.i64();
        s.target_ord = r.u64();
        s.history = detail::read_events(r);
    }
    return out;
}

/// Writes train.bin / valid.bin / test.bin / vocab.bin into `dir`.
inline void save_split_dir(const DatasetSplit& split, const Vocab& vocab, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_vocab(vocab, dir / "vocab.bin");
    save_train_part(split.train, dir / "train.bin");
    save_eval_part(split.valid, "BMVA", dir / "valid.bin");
    save_eval_part(split.test, "BMTE", dir / "test.bin");
}

struct LoadedSplit {
    DatasetSplit split;
    Vocab vocab;
};

inline LoadedSplit load_split_dir(const std::filesystem::path& dir) {
    LoadedSplit out;
    out.vocab = load_vocab(dir / "vocab.bin");
    out.split.train = load_train_part(dir / "train.bin");
    out.split.valid = load_eval_part("BMVA", dir / "valid.bin", "validation split");
    out.split.test = load_eval_part("BMTE", dir / "test.bin", "test split");
    return out;
}

} // namespace bmlp
