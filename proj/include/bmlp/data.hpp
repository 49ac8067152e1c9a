#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "bmlp/common.hpp"
#include "bmlp/model.hpp"
#include "bmlp/vocab.hpp"

namespace bmlp {

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

enum class FileFormat { tsv, csv };

struct ColumnMap {
    int user = 0;
    int item = 1;
    int behavior = 2;
    int timestamp = 3;

    int max_index() const { return std::max({user, item, behavior, timestamp}); }
};

struct IngestOptions {
    FileFormat format = FileFormat::tsv;
    bool has_header = false;
    ColumnMap columns;
    /// Hard-error threshold: more than this fraction of malformed lines
    /// aborts ingestion.
    double max_malformed_fraction = 0.01;
};

struct IngestResult {
    std::vector<InteractionRecord> records;
    std::size_t total_lines = 0;
    std::size_t malformed = 0;
    std::vector<std::string> offenders; // first few malformed lines, with line numbers
};

inline IngestResult ingest(const std::filesystem::path& path, const IngestOptions& opts = {}) {
    std::ifstream in(path);
    if (!in) throw DataError(detail::cat("ingest: cannot read '", path.string(), "'"));
    const char sep = opts.format == FileFormat::tsv ? '\t' : ',';
    IngestResult out;
    std::string line;
    std::size_t line_no = 0;
    bool skipped_header = !opts.has_header;
    std::vector<std::string> fields;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!skipped_header) {
            skipped_header = true;
            continue;
        }
        ++out.total_lines;
        fields.clear();
        std::size_t start = 0;
        while (true) {
            const std::size_t pos = line.find(sep, start);
            fields.push_back(line.substr(start, pos == std::string::npos ? pos : pos - start));
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
        auto malformed = [&](const char* why) {
            ++out.malformed;
            if (out.offenders.size() < 10)
                out.offenders.push_back(detail::cat("line ", line_no, " (", why, "): ", line));
        };
        if (static_cast<int>(fields.size()) <= opts.columns.max_index()) {
            malformed("too few columns");
            continue;
        }
        InteractionRecord r;
        r.user = fields[opts.columns.user];
        r.item = fields[opts.columns.item];
        r.behavior = fields[opts.columns.behavior];
        const std::string& ts = fields[opts.columns.timestamp];
        if (r.user.empty() || r.item.empty() || r.behavior.empty() || ts.empty()) {
            malformed("empty field");
            continue;
        }
        char* end = nullptr;
        errno = 0;
        const long long v = std::strtoll(ts.c_str(), &end, 10);
        if (errno != 0 || end == ts.c_str() || *end != '\0' || v < 0) {
            malformed("bad timestamp");
            continue;
        }
        r.timestamp = static_cast<std::int64_t>(v);
        out.records.push_back(std::move(r));
    }
    if (out.total_lines > 0 &&
        static_cast<double>(out.malformed) > opts.max_malformed_fraction * static_cast<double>(out.total_lines)) {
        std::string msg = detail::cat("ingest: ", out.malformed, " of ", out.total_lines,
                                      " lines malformed in '", path.string(), "':");
        for (const auto& o : out.offenders) msg += "\n  " + o;
        throw DataError(msg);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ingestion-time transforms
// ---------------------------------------------------------------------------

/// Rating simulation: the behavior column holds an integer rating; ratings at
/// or above the threshold become the target behavior, the rest the auxiliary
/// one. Unparseable ratings are dropped.
struct RatingSimulation {
    int threshold = 5;
    std::string target_name = "buy";
    std::string aux_name = "click";
};

inline std::vector<InteractionRecord> simulate_ratings(std::vector<InteractionRecord> records,
                                                       const RatingSimulation& sim) {
    std::vector<InteractionRecord> out;
    out.reserve(records.size());
    for (auto& r : records) {
        char* end = nullptr;
        const long rating = std::strtol(r.behavior.c_str(), &end, 10);
        if (end == r.behavior.c_str() || *end != '\0') continue;
        r.behavior = rating >= sim.threshold ? sim.target_name : sim.aux_name;
        out.push_back(std::move(r));
    }
    return out;
}

/// Drops records whose timestamp falls inside any [begin, end) range
/// (promotion-day exclusion and similar).
inline std::vector<InteractionRecord> exclude_time_ranges(std::vector<InteractionRecord> records,
                                                          const std::vector<std::pair<std::int64_t, std::int64_t>>& ranges) {
    if (ranges.empty()) return records;
    std::vector<InteractionRecord> out;
    out.reserve(records.size());
    for (auto& r : records) {
        bool excluded = false;
        for (const auto& [b, e] : ranges)
            if (r.timestamp >= b && r.timestamp < e) {
                excluded = true;
                break;
            }
        if (!excluded) out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Deduplication and iterative filtering
// ---------------------------------------------------------------------------

struct DedupResult {
    std::vector<InteractionRecord> records;
    std::size_t removed = 0;
};

/// For duplicated (user, item, behavior) triples only the earliest record
/// survives; timestamp ties keep the first occurrence in file order. The
/// surviving records keep their original relative order.
inline DedupResult dedup_earliest(const std::vector<InteractionRecord>& records) {
    struct Best {
        std::size_t index;
        std::int64_t ts;
    };
    std::unordered_map<std::string, Best> best;
    best.reserve(records.size());
    auto key = [](const InteractionRecord& r) { return r.user + '\x1f' + r.item + '\x1f' + r.behavior; };
    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::string k = key(records[i]);
        auto it = best.find(k);
        if (it == best.end())
            best.emplace(k, Best{i, records[i].timestamp});
        else if (records[i].timestamp < it->second.ts)
            it->second = Best{i, records[i].timestamp};
    }
    std::vector<std::uint8_t> keep(records.size(), 0);
    for (const auto& [k, b] : best) keep[b.index] = 1;
    DedupResult out;
    out.records.reserve(best.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (keep[i])
            out.records.push_back(records[i]);
        else
            ++out.removed;
    }
    return out;
}

struct FilterStats {
    std::size_t rounds = 0; // rounds that removed something
    std::size_t removed_items = 0;
    std::size_t removed_users = 0;
};

/// Alternately removes items purchased fewer than `min_item_purchases` times
/// and users with fewer than `min_user_purchases` purchases until neither
/// rule fires. Removing an entity removes all of its records, which is what
/// makes iteration necessary.
inline std::vector<InteractionRecord> iterative_filter(std::vector<InteractionRecord> records,
                                                       std::size_t min_item_purchases,
                                                       std::size_t min_user_purchases,
                                                       const std::string& target_behavior,
                                                       FilterStats* stats = nullptr) {
    if (min_item_purchases < 1 || min_user_purchases < 1)
        throw ConfigError("iterative_filter: thresholds must be >= 1");
    FilterStats local;
    FilterStats* st = stats ? stats : &local;
    *st = FilterStats{};
    while (true) {
        bool changed = false;
        std::unordered_map<std::string, std::size_t> item_purchases;
        for (const auto& r : records)
            if (r.behavior == target_behavior) ++item_purchases[r.item];
        std::unordered_set<std::string> dead_items;
        for (const auto& r : records) {
            auto it = item_purchases.find(r.item);
            const std::size_t n = it == item_purchases.end() ? 0 : it->second;
            if (n < min_item_purchases) dead_items.insert(r.item);
        }
        if (!dead_items.empty()) {
            std::erase_if(records, [&](const InteractionRecord& r) { return dead_items.count(r.item) > 0; });
            st->removed_items += dead_items.size();
            changed = true;
        }
        std::unordered_map<std::string, std::size_t> user_purchases;
        for (const auto& r : records)
            if (r.behavior == target_behavior) ++user_purchases[r.user];
        std::unordered_set<std::string> dead_users;
        for (const auto& r : records) {
            auto it = user_purchases.find(r.user);
            const std::size_t n = it == user_purchases.end() ? 0 : it->second;
            if (n < min_user_purchases) dead_users.insert(r.user);
        }
        if (!dead_users.empty()) {
            std::erase_if(records, [&](const InteractionRecord& r) { return dead_users.count(r.user) > 0; });
            st->removed_users += dead_users.size();
            changed = true;
        }
        if (!changed) break;
        ++st->rounds;
    }
    if (records.empty())
        throw DataError("iterative_filter: no records survive the purchase-count thresholds");
    return records;
}

// ---------------------------------------------------------------------------
// Per-user streams and the leave-last-two-purchases split
// ---------------------------------------------------------------------------

/// One event in dense-index space. `ord` is the original record position and
/// breaks timestamp ties deterministically.
struct IndexedEvent {
    std::uint32_t item = 0;
    std::uint32_t behavior = 0;
    std::int64_t ts = 0;
    std::uint64_t ord = 0;

    bool before(const IndexedEvent& o) const { return ts != o.ts ? ts < o.ts : ord < o.ord; }
};

struct UserSeq {
    std::string user;
    std::vector<IndexedEvent> events;
};

/// Groups records per user (sorted by user id) with events in (timestamp,
/// file-order) order.
inline std::vector<UserSeq> group_users(const std::vector<InteractionRecord>& records, const Vocab& vocab) {
    std::map<std::string, std::vector<IndexedEvent>> by_user;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        by_user[r.user].push_back(IndexedEvent{vocab.item_of(r.item), vocab.behavior_of(r.behavior),
                                               r.timestamp, static_cast<std::uint64_t>(i)});
    }
    std::vector<UserSeq> out;
    out.reserve(by_user.size());
    for (auto& [user, events] : by_user) {
        std::stable_sort(events.begin(), events.end(),
                         [](const IndexedEvent& a, const IndexedEvent& b) { return a.before(b); });
        out.push_back(UserSeq{user, std::move(events)});
    }
    return out;
}

/// One held-out prediction: the target event and everything before it.
struct EvalSample {
    std::string user;
    std::vector<IndexedEvent> history;
    std::uint32_t target_item = 0;
    std::int64_t target_ts = 0;
    std::uint64_t target_ord = 0;

    bool examined() const {
        for (const auto& e : history)
            if (e.item == target_item) return true;
        return false;
    }
};

struct DatasetSplit {
    std::vector<UserSeq> train; // per-user events strictly before the penultimate purchase
    std::vector<EvalSample> valid;
    std::vector<EvalSample> test;
};

struct SplitStats {
    std::size_t users_in = 0;
    std::size_t users_excluded_lt2_purchases = 0;
    std::size_t users_split = 0;
    std::size_t valid_cold_dropped = 0;
    std::size_t test_cold_dropped = 0;
    std::size_t valid_empty_history_dropped = 0;
    std::size_t examined_test = 0;
};

/// Last purchase becomes the test target with everything before it as
/// history (auxiliary events between the last two purchases included);
/// the penultimate purchase becomes the validation target likewise. The
/// per-user training stream is everything strictly before the penultimate
/// purchase. Validation/test samples whose target item never occurs in any
/// training stream are dropped (cold-start rule).
inline DatasetSplit split_dataset(const std::vector<UserSeq>& users, const Vocab& vocab,
                                  SplitStats* stats = nullptr, unsigned threads = 1) {
    SplitStats local;
    SplitStats* st = stats ? stats : &local;
    *st = SplitStats{};
    st->users_in = users.size();

    struct PerUser {
        bool ok = false;
        UserSeq train;
        EvalSample valid;
        EvalSample test;
        bool valid_has_history = false;
    };
    std::vector<PerUser> per_user(users.size());
    parallel_for(users.size(), threads, [&](std::size_t i) {
        const UserSeq& u = users[i];
        std::vector<std::size_t> purchase_pos;
        for (std::size_t k = 0; k < u.events.size(); ++k)
            if (u.events[k].behavior == vocab.target_behavior) purchase_pos.push_back(k);
        if (purchase_pos.size() < 2) return;
        PerUser& p = per_user[i];
        p.ok = true;
        const std::size_t last = purchase_pos.back();
        const std::size_t penult = purchase_pos[purchase_pos.size() - 2];
        p.test.user = u.user;
        p.test.target_item = u.events[last].item;
        p.test.target_ts = u.events[last].ts;
        p.test.target_ord = u.events[last].ord;
        p.test.history.assign(u.events.begin(), u.events.begin() + static_cast<std::ptrdiff_t>(last));
        p.valid.user = u.user;
        p.valid.target_item = u.events[penult].item;
        p.valid.target_ts = u.events[penult].ts;
        p.valid.target_ord = u.events[penult].ord;
        p.valid.history.assign(u.events.begin(), u.events.begin() + static_cast<std::ptrdiff_t>(penult));
        p.valid_has_history = penult > 0;
        p.train.user = u.user;
        p.train.events.assign(u.events.begin(), u.events.begin() + static_cast<std::ptrdiff_t>(penult));
    });

    DatasetSplit out;
    std::unordered_set<std::uint32_t> train_items;
    for (const auto& p : per_user) {
        if (!p.ok) continue;
        for (const auto& e : p.train.events) train_items.insert(e.item);
    }
    for (auto& p : per_user) {
        if (!p.ok) {
            ++st->users_excluded_lt2_purchases;
            continue;
        }
        ++st->users_split;
        out.train.push_back(std::move(p.train));
        if (!p.valid_has_history)
            ++st->valid_empty_history_dropped;
        else if (!train_items.count(p.valid.target_item))
            ++st->valid_cold_dropped;
        else
            out.valid.push_back(std::move(p.valid));
        if (!train_items.count(p.test.target_item)) {
            ++st->test_cold_dropped;
        } else {
            if (p.test.examined()) ++st->examined_test;
            out.test.push_back(std::move(p.test));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sliding-window training instances
// ---------------------------------------------------------------------------

/// Builds the model input for predicting the event at `upto` (exclusive
/// prefix end): the last L events as the heterogeneous window plus the
/// per-behavior recent subsequences over the whole prefix.
inline TrainingInstance make_instance(const std::vector<IndexedEvent>& events, std::size_t upto,
                                      std::uint32_t target_item, const HyperParams& hp, const Vocab& vocab,
                                      const std::string& id) {
    TrainingInstance inst;
    inst.id = id;
    inst.target_item = target_item;
    const std::size_t L = hp.seq_len;
    const std::size_t keep = std::min(L, upto);
    inst.hetero.items.assign(L, 0);
    inst.hetero.behaviors.assign(L, 0);
    inst.hetero.mask.assign(L, 0);
    for (std::size_t k = 0; k < keep; ++k) {
        const IndexedEvent& e = events[upto - keep + k];
        const std::size_t pos = L - keep + k;
        inst.hetero.items[pos] = e.item;
        inst.hetero.behaviors[pos] = e.behavior;
        inst.hetero.mask[pos] = 1;
    }
    inst.hetero.target_item = target_item;
    inst.hetero.user = id;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> history;
    history.reserve(upto);
    for (std::size_t k = 0; k < upto; ++k) history.push_back({events[k].item, events[k].behavior});
    inst.aux = extract_aux(history, hp.aux_len, vocab);
    return inst;
}

/// One instance per purchase event in each training stream (or per event of
/// any type with the train_all_targets switch), skipping targets with empty
/// prefixes.
inline std::vector<TrainingInstance> gen_instances(const std::vector<UserSeq>& train, const HyperParams& hp,
                                                   const Vocab& vocab) {
    std::vector<TrainingInstance> out;
    for (const auto& u : train) {
        for (std::size_t k = 1; k < u.events.size(); ++k) {
            const IndexedEvent& e = u.events[k];
            if (!hp.train_all_targets && e.behavior != vocab.target_behavior) continue;
            out.push_back(make_instance(u.events, k, e.item, hp, vocab,
                                        detail::cat(u.user, "@", k)));
        }
    }
    return out;
}

/// Leakage audit: rebuilds every training instance from scratch and verifies
/// that no window or subsequence reaches at or beyond its own target, and
/// that every held-out history lies strictly before its target. Returns the
/// number of violations (0 = clean).
inline std::size_t audit_no_leakage(const DatasetSplit& split, const HyperParams& hp, const Vocab& vocab) {
    std::size_t violations = 0;
    for (const auto& u : split.train) {
        for (std::size_t k = 1; k < u.events.size(); ++k) {
            if (!hp.train_all_targets && u.events[k].behavior != vocab.target_behavior) continue;
            const IndexedEvent& target = u.events[k];
            // Every event in the prefix must be strictly before the target.
            for (std::size_t j = 0; j < k; ++j)
                if (!u.events[j].before(target)) ++violations;
            // The materialized window must equal the prefix tail.
            TrainingInstance inst = make_instance(u.events, k, target.item, hp, vocab, "audit");
            const std::size_t keep = std::min(hp.seq_len, k);
            for (std::size_t p = 0; p < keep; ++p) {
                const IndexedEvent& e = u.events[k - keep + p];
                const std::size_t pos = hp.seq_len - keep + p;
                if (inst.hetero.items[pos] != e.item || inst.hetero.behaviors[pos] != e.behavior) ++violations;
            }
            for (std::size_t p = 0; p + keep < hp.seq_len; ++p)
                if (inst.hetero.mask[p]) ++violations;
        }
    }
    auto check_samples = [&](const std::vector<EvalSample>& samples) {
        for (const auto& s : samples) {
            IndexedEvent target{s.target_item, vocab.target_behavior, s.target_ts, s.target_ord};
            for (const auto& e : s.history)
                if (!e.before(target)) ++violations;
        }
    };
    check_samples(split.valid);
    check_samples(split.test);
    return violations;
}

} // namespace bmlp
