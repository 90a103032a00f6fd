#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mrgr/backbone.hpp"
#include "mrgr/dataset.hpp"
#include "mrgr/tensor.hpp"

namespace mrgr {

// How a memory entry's vector is pooled from the layer-L states, and what is
// encoded to produce it. Defaults match the main method: the short window
// h_m ending at interaction m, pooled at the last position (causal models
// accumulate the window's context there). The alternatives are ablation
// hooks.
enum class PoolMode { last, mean };
enum class EncodeMode { window, single_item };

const char* to_string(PoolMode m);
const char* to_string(EncodeMode m);
PoolMode pool_mode_from_string(const std::string& s);
EncodeMode encode_mode_from_string(const std::string& s);

struct MemoryEntry {
    int64_t m = 0;  // 1-based interaction index within the user history
    int64_t ts = 0; // timestamp of interaction m
    Tensor z;       // [d_model]
};

struct MemoryBank {
    std::string user;
    int64_t cut = 0;
    std::vector<MemoryEntry> entries; // sorted by m ascending; may be empty
};

// Pool layer-L states to a single d_model vector.
Tensor pool_states(const HiddenSeq& states, PoolMode mode = PoolMode::last);

// The memory vector for interaction m: encode h_m (or just item m) with the
// null prefix and pool.
Tensor encode_memory_vector(const UserSequence& seq, int64_t m, const BackboneParams& p,
                            const ItemVocabulary& vocab, int64_t short_window, PoolMode pool,
                            EncodeMode enc);

// All memory candidates for (user, cut) under the window rule, encoded fresh.
MemoryBank build_bank(const UserSequence& seq, int64_t cut, const BackboneParams& p,
                      const ItemVocabulary& vocab, int64_t short_window, int64_t max_seq,
                      PoolMode pool = PoolMode::last, EncodeMode enc = EncodeMode::window);

// ---------------------------------------------------------------- store ----
//
// z_m depends only on (user, m) — never on the cut — so the store keeps one
// vector per (user, m) and serves any bank as a contiguous slice. Built once
// per backbone checkpoint over every sample that needs memory; persisted in
// the "MRGRMEMB" container together with the checkpoint's file hash so a
// retrained backbone invalidates it.
class BankStore {
public:
    struct UserVectors {
        int64_t first_m = 0;
        std::vector<int64_t> ts;  // per m, size = row count
        std::vector<int64_t> cuts; // sample cuts this store was built for
        Tensor vectors;            // [count x d_model]
    };

    BankStore() = default;

    static BankStore build(const std::vector<const Sample*>& samples, const SequenceIndex& seqs,
                           const BackboneParams& p, const ItemVocabulary& vocab,
                           const DataParams& dp, PoolMode pool, EncodeMode enc, int workers);

    // Slice the stored vectors into the bank for one sample. Samples without
    // candidates get an empty bank; a sample outside the built coverage means
    // the store is stale relative to the split.
    MemoryBank bank_for(const Sample& s) const;

    int64_t user_count() const { return static_cast<int64_t>(users_.size()); }
    int64_t vector_count() const;
    int64_t d_model() const { return d_model_; }
    PoolMode pool() const { return pool_; }
    EncodeMode encode() const { return enc_; }
    const std::map<std::string, UserVectors>& users() const { return users_; }

    void save(const std::string& path, const std::string& backbone_hash) const;
    // expected_backbone_hash mismatch -> StaleArtifactError naming the stage
    // to rerun; pass the hash of the checkpoint you are about to use.
    static BankStore load(const std::string& path, const std::string& expected_backbone_hash);

private:
    std::map<std::string, UserVectors> users_; // ordered => deterministic files
    int64_t d_model_ = 0;
    int64_t short_window_ = 0;
    PoolMode pool_ = PoolMode::last;
    EncodeMode enc_ = EncodeMode::window;
};

} // namespace mrgr
