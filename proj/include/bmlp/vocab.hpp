#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "bmlp/common.hpp"

namespace bmlp {

/// One (user, item, behavior, timestamp) event from raw logs.
struct InteractionRecord {
    std::string user;
    std::string item;
    std::string behavior;
    std::int64_t timestamp = 0;
};

/// Dense id spaces for items and behaviors. Index 0 is reserved for padding
/// in both spaces and never appears in encoded data.
struct Vocab {
    std::vector<std::string> items;        // items[i] = raw id of dense index i; items[0] = ""
    std::vector<std::string> behaviors;    // same scheme
    std::unordered_map<std::string, std::uint32_t> item_index;
    std::unordered_map<std::string, std::uint32_t> behavior_index;
    std::uint32_t target_behavior = 0;

    std::size_t n_items() const { return items.empty() ? 0 : items.size() - 1; }
    std::size_t n_behaviors() const { return behaviors.empty() ? 0 : behaviors.size() - 1; }
    /// Number of auxiliary (non-target) behaviors.
    std::size_t n_aux() const { return n_behaviors() == 0 ? 0 : n_behaviors() - 1; }

    /// Auxiliary behavior indices in ascending order; fixes the slice order
    /// of the purchase-intent input tensor.
    std::vector<std::uint32_t> aux_behaviors() const {
        std::vector<std::uint32_t> out;
        for (std::uint32_t b = 1; b <= n_behaviors(); ++b)
            if (b != target_behavior) out.push_back(b);
        return out;
    }

    std::uint32_t item_of(const std::string& raw) const {
        auto it = item_index.find(raw);
        if (it == item_index.end()) throw DataError(detail::cat("vocab: unknown item id '", raw, "'"));
        return it->second;
    }

    std::uint32_t behavior_of(const std::string& raw) const {
        auto it = behavior_index.find(raw);
        if (it == behavior_index.end()) throw DataError(detail::cat("vocab: unknown behavior '", raw, "'"));
        return it->second;
    }
};

/// Builds dense indices in first-appearance order over the record stream.
/// Deterministic for a fixed record order.
inline Vocab build_vocab(const std::vector<InteractionRecord>& records, const std::string& target_behavior_name) {
    if (records.empty()) throw DataError("build_vocab: no records");
    Vocab v;
    v.items.push_back("");
    v.behaviors.push_back("");
    for (const auto& r : records) {
        if (v.item_index.emplace(r.item, static_cast<std::uint32_t>(v.items.size())).second)
            v.items.push_back(r.item);
        if (v.behavior_index.emplace(r.behavior, static_cast<std::uint32_t>(v.behaviors.size())).second)
            v.behaviors.push_back(r.behavior);
    }
    auto it = v.behavior_index.find(target_behavior_name);
    if (it == v.behavior_index.end())
        throw DataError(detail::cat("build_vocab: target behavior '", target_behavior_name,
                                    "' does not occur in the data"));
    v.target_behavior = it->second;
    return v;
}

} // namespace bmlp
