#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mrgr/backbone.hpp"

namespace mrgr {

struct InteractionEvent {
    std::string user;
    std::string item;
    int64_t ts = 0; // epoch seconds
};

struct UserSequence {
    std::string user;
    std::vector<InteractionEvent> events; // sorted by ts, ties by input order
};

// One next-item prediction instance. cut = number of events strictly before
// the target, so the target is the (cut+1)-th event of the user's sequence.
struct Sample {
    std::string sample_id; // "<user>@<cut>"
    std::string user;
    int64_t cut = 0;
    std::string target_item;
    int64_t target_ts = 0;
    std::vector<std::string> window_items; // h_t, chronological
    // Memory candidates are interactions m in [cand_lo, cand_lo + n_cands),
    // 1-based within the user's sequence. n_cands == 0 means no memory.
    int64_t cand_lo = 0;
    int64_t n_cands = 0;
    int64_t first_considered_ts = 0; // earliest event inside the length cap
};

struct DatasetSplit {
    std::vector<Sample> train, val, test;
};

struct DataParams {
    int64_t short_window = 10;
    int64_t max_seq = 100;
    int64_t min_item_interactions = 5;
    int64_t min_seq_len = 20;
    int64_t t_train_end = 0;
    int64_t t_val_end = 0;
    int64_t t_test_end = 0;
    // Keep only the latest N samples per user per split (0 = keep all).
    // Desk-scale budgets rely on the default of 1.
    int64_t samples_per_user = 1;
};

// JSON-lines events: {"user": ..., "item": ..., "ts": ...} per line.
// Malformed lines and missing/ill-typed fields raise FormatError naming the
// line number. Order is preserved; duplicates are allowed.
std::vector<InteractionEvent> ingest(const std::string& path);

// Iteratively drop items with < min_item_interactions occurrences and users
// with < min_seq_len surviving events until a fixed point, then build the
// vocabulary over surviving items. Sequences are sorted by user id; events
// within a user by timestamp (stable, so equal timestamps keep input order).
struct FilteredData {
    std::vector<UserSequence> sequences;
    ItemVocabulary vocab;
};
FilteredData filter_and_sequence(const std::vector<InteractionEvent>& events,
                                 int64_t min_item_interactions, int64_t min_seq_len);

// Windowing at a cut: only the most recent min(cut, max_seq) events count;
// the last short_window of those form h_t, the rest are memory candidates.
struct WindowResult {
    std::vector<std::string> h_items;
    int64_t cand_lo = 0; // 1-based index of the first candidate, 0 if none
    int64_t n_cands = 0;
    int64_t first_considered_ts = 0;
};
WindowResult window(const UserSequence& seq, int64_t cut, int64_t short_window, int64_t max_seq);

// The short window that defines memory entry m: up to short_window items
// ending at (and including) interaction m.
std::vector<std::string> memory_window_items(const UserSequence& seq, int64_t m,
                                             int64_t short_window);

// Chronological split over global-time boundaries. A sample lands in the
// split whose interval contains its target timestamp; intervals are
// (prev_boundary, boundary] so a target exactly on t_train_end is a train
// sample. Samples whose immediate predecessor shares the target's timestamp
// are skipped (strict no-leakage rule). Output order: user id, then cut.
DatasetSplit split_chronological(const std::vector<UserSequence>& sequences, const DataParams& dp);

// Look-up helper used by training/eval code.
class SequenceIndex {
public:
    explicit SequenceIndex(const std::vector<UserSequence>& seqs);
    const UserSequence& by_user(const std::string& user) const;

private:
    std::map<std::string, const UserSequence*> index_;
};

// ---------------------------------------------------------- split manifest ----

// JSON artifact listing every sample tuple plus provenance: the events file
// it was cut from (path + content hash) and the hash of the data-shaping
// configuration, so downstream stages can detect drift.
void save_split(const std::string& path, const DatasetSplit& split, const DataParams& dp,
                const std::string& events_path, const std::string& events_hash,
                const std::string& config_hash);

struct LoadedSplit {
    DatasetSplit split;
    DataParams params;
    std::string events_path;
    std::string events_hash;
    std::string config_hash;
};
LoadedSplit load_split(const std::string& path);

} // namespace mrgr
