#pragma once

// Run configuration: one flat, commented key=value file (JSON accepted as an
// alternative) that drives every pipeline stage. The canonical text rendering
// of the non-local keys is hashed into a config fingerprint used for artifact
// staleness tracking; local/run-environment keys (output paths, worker count,
// kernel selection) are excluded so they never invalidate artifacts.

#include <cstdint>
#include <string>
#include <vector>

#include "mrgr/backbone.hpp"
#include "mrgr/dataset.hpp"
#include "mrgr/memory_bank.hpp"
#include "mrgr/retriever.hpp"
#include "mrgr/synthetic.hpp"
#include "mrgr/training.hpp"

namespace mrgr {

struct RunConfig {
    // --- run environment (excluded from the config fingerprint) ---
    std::string out_dir = "runs/default";
    std::string cache_dir;        // empty -> out_dir; MRGR_CACHE_DIR overrides
    int64_t workers = 0;          // 0 -> hardware concurrency
    std::string kernels = "auto"; // auto|scalar|avx2|avx512|neon

    // --- experiment identity ---
    int64_t seed = 1;

    // --- data shaping ---
    std::string data_input;              // events JSONL path (empty until prepare-data)
    int64_t data_short_window = 10;
    int64_t data_max_seq = 100;
    int64_t data_min_item_interactions = 5;
    int64_t data_min_seq_len = 20;
    int64_t data_t_train_end = SYNTH_T_TRAIN_END;
    int64_t data_t_val_end = SYNTH_T_VAL_END;
    int64_t data_t_test_end = SYNTH_T_TEST_END;
    int64_t data_samples_per_user = 1;

    // --- synthetic generator ---
    int64_t synthetic_n_users = 2000;
    int64_t synthetic_n_item_pairs = 200;
    int64_t synthetic_n_fillers = 300;
    int64_t synthetic_seq_len = 60;
    int64_t synthetic_anchor_lo = 1;
    int64_t synthetic_anchor_hi = 20;
    double synthetic_p_long = 0.7;

    // --- backbone architecture ---
    int64_t model_d_model = 64;
    int64_t model_n_layers = 4;
    int64_t model_split_layer = 2;
    int64_t model_n_heads = 4;
    int64_t model_ff_dim = 128;
    int64_t model_max_seq_len = 16;
    double model_dropout = 0.0;

    // --- training ---
    double train_backbone_lr = 3e-3;
    int64_t train_backbone_batch = 32;
    int64_t train_backbone_epochs = 120;
    double train_p_prefix = 0.5;
    double train_retriever_lr = 1e-3;
    int64_t train_retriever_batch = 64;
    int64_t train_retriever_epochs = 150;
    int64_t train_retriever_hidden = 256;
    int64_t train_patience = 10;

    // --- annotation ---
    double annotate_tau_label = 1.0;

    // --- memory encoding ---
    std::string memory_pool = "last";     // last|mean
    std::string memory_encode = "window"; // window|single_item

    // --- evaluation ---
    std::string eval_k_list = "1,5"; // comma-separated cutoffs for recall/ndcg

    // ------------------------------------------------------------ helpers ----

    void validate() const; // throws UsageError on out-of-range values

    DataParams data_params() const;
    SyntheticConfig synthetic_config() const;
    ModelConfig model_config(int64_t vocab_size = 0) const;
    BackboneTrainConfig backbone_train_config() const;
    RetrieverTrainConfig retriever_train_config() const;
    PoolMode pool_mode() const;
    EncodeMode encode_mode() const;
    std::vector<int64_t> k_list() const;
    int resolved_workers() const;

    // Artifact locations, all rooted at out_dir (annotations honour cache_dir).
    std::string events_path() const;
    std::string split_path() const;
    std::string vocab_path() const;
    std::string backbone_path() const;
    std::string banks_path() const;
    std::string annotations_path() const;
    std::string retriever_path() const;
    std::string report_path(const std::string& variant, const std::string& split_name) const;
    std::string compare_csv_path() const;
    std::string manifest_path(const std::string& stage) const;
};

// Parse a config file. Files whose first non-space character is '{' are
// parsed as JSON (nested objects flatten to dotted keys); everything else is
// treated as flat `key = value` lines with '#' comments. Unknown keys and
// malformed values raise UsageError.
RunConfig load_config(const std::string& path);

// Apply a single `key=value` override (CLI --set) on top of a config.
void apply_override(RunConfig& cfg, const std::string& assignment);

// Canonical text rendering. include_local controls whether the
// run-environment keys (out_dir, cache_dir, workers, kernels) are included.
std::string canonical_dump(const RunConfig& cfg, bool include_local);

// Commented rendering of every key with its default, for `config --dump`.
std::string annotated_dump(const RunConfig& cfg);

// FNV-1a hash (hex) of canonical_dump(cfg, false): the experiment fingerprint.
std::string config_hash(const RunConfig& cfg);

// Fingerprint of the data-shaping keys only (seed, data.*, synthetic.*);
// embedded in the split artifact so model/training edits do not invalidate it.
std::string data_config_hash(const RunConfig& cfg);

} // namespace mrgr
