#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bmlp/common.hpp"

namespace bmlp {

/// Corrupt, truncated or incompatible serialized state.
class CheckpointError : public Error {
public:
    enum class Kind { corrupt_header, version_mismatch, truncated, checksum, hyper_mismatch };
    CheckpointError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

inline std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    std::uint64_t h = seed;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(detail::cat("cannot open '", path.string(), "' for hashing"));
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    }
    return h;
}

/// Little-endian binary writer buffering into memory; the trailing checksum
/// covers every byte written before it.
class BinaryWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }

    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }

    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }

    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }

    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }

    void raw(const void* data, std::size_t n) {
        const char* p = static_cast<const char*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }

    void finish_with_checksum() { u32(crc32(buf_.data(), buf_.size())); }

    const std::vector<char>& bytes() const { return buf_; }

    void write_file(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError(detail::cat("cannot write '", path.string(), "'"));
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw DataError(detail::cat("short write to '", path.string(), "'"));
    }

private:
    std::vector<char> buf_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::vector<char> bytes) : buf_(std::move(bytes)) { limit_ = buf_.size(); }

    static BinaryReader from_file(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError(detail::cat("cannot open '", path.string(), "'"));
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return BinaryReader(std::move(bytes));
    }

    /// Validates and strips the trailing CRCup front.
    void check_trailing_checksum(const std::string& what) {
        if (buf_.size() < 4) throw CheckpointError(CheckpointError::Kind::truncated, what + ": file too short");
        std::uint32_t stored = 0;
        for (int i = 0; i < 4; ++i)
            stored |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[buf_.size() - 4 + i])) << (8 * i);
        const std::uint32_t actual = crc32(buf_.data(), buf_.size() - 4);
        if (stored != actual)
            throw CheckpointError(CheckpointError::Kind::checksum, what + ": checksum mismatch (corrupt or truncated)");
        limit_ = buf_.size() - 4;
    }

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
        return v;
    }

    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }

    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == limit_; }

private:
    void need(std::size_t n) {
        if (pos_ + n > limit_)
            throw CheckpointError(CheckpointError::Kind::truncated, "unexpected end of serialized data");
    }

    std::vector<char> buf_;
    std::size_t pos_ = 0;
    std::size_t limit_ = 0;
};

} // namespace bmlp
