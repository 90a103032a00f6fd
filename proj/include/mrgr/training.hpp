#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mrgr/backbone.hpp"
#include "mrgr/dataset.hpp"
#include "mrgr/memory_bank.hpp"

namespace mrgr {

struct BackboneTrainConfig {
    ModelConfig model; // vocab_size must already be set from the vocabulary
    double lr = 3e-3;
    int64_t batch = 32;
    int64_t epochs = 120;
    int64_t patience = 10; // early stop on val Recall@1
    double p_prefix = 0.5; // prefix-exposure probability per (sample, epoch)
    uint64_t seed = 1;
    int workers = 1;
    int64_t short_window = 10;
    PoolMode pool = PoolMode::last;
    EncodeMode encode = EncodeMode::window;
    // Progress hook, called after every epoch (val_recall1 is NaN when there
    // is no validation set). May be empty.
    std::function<void(int64_t epoch, double train_nll, double val_recall1)> on_epoch;
};

struct BackboneTrainResult {
    BackboneParams params;
    int64_t epochs_run = 0;
    int64_t best_epoch = -1;
    double best_val_recall1 = 0.0;
    std::vector<double> epoch_loss; // mean target NLL per epoch
};

// Next-item NLL over the training samples. With probability p_prefix a sample
// sees the pooled layer-L encoding of one uniformly random true past window
// of the same user in its prefix slot (recomputed against the current
// parameters, injected detached) — a small backbone must be taught to read
// prefixes, it cannot be assumed to. Early stopping tracks val Recall@1 where
// every val sample carries one fixed, seed-derived random-window prefix, so
// the tracked metric exercises prefix reading without needing a retriever.
BackboneTrainResult train_backbone(const std::vector<const Sample*>& train_samples,
                                   const std::vector<const Sample*>& val_samples,
                                   const SequenceIndex& seqs, const ItemVocabulary& vocab,
                                   const BackboneTrainConfig& cfg);

} // namespace mrgr
