#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrgr/backbone.hpp"
#include "mrgr/memory_bank.hpp"
#include "mrgr/tape.hpp"
#include "mrgr/tensor.hpp"

namespace mrgr {

// 2-layer MLP that maps the local query z_t into the memory space; relevance
// is the softmax over dot products with the bank vectors.
struct RetrieverParams {
    int64_t d_model = 0;
    int64_t hidden = 256;
    Tensor w1, b1; // [d x hidden], [hidden]
    Tensor w2, b2; // [hidden x d], [d]
    bool operator==(const RetrieverParams&) const = default;

    // Weights and biases uniform in ±1/sqrt(fan_in), seed-controlled.
    static RetrieverParams init(int64_t d_model, int64_t hidden, uint64_t seed);
    std::vector<Tensor*> all_params();
    std::vector<const Tensor*> all_params() const;
    std::vector<std::pair<std::string, Tensor*>> named_params();
};

// Softmax-normalized relevance scores, aligned with bank entry order.
using ScoreVector = std::vector<double>;

// Bank entries stacked into an [M x d] matrix (entry order preserved).
Tensor bank_matrix(const MemoryBank& bank);

// Tape builder shared by inference and training so scores agree bitwise.
class RetrieverGraph {
public:
    RetrieverGraph(const RetrieverParams& r, bool with_grads);

    Tape& tape() { return tape_; }
    // [B x d] -> [B x d]: relu(x W1 + b1) W2 + b2.
    NodeId mlp(NodeId x);
    // query [1 x d] against bank rows [M x d] -> softmax scores [1 x M].
    NodeId scores(NodeId query, NodeId bank_rows);
    void accumulate_param_grads(std::vector<Tensor>& acc);

private:
    const RetrieverParams& r_;
    Tape tape_;
    std::vector<NodeId> bound_;
};

// s_m = softmax over m of MLP(z_t) . z_m. Empty bank -> EmptyMemoryError.
ScoreVector score(const Tensor& z_t, const MemoryBank& bank, const RetrieverParams& r);

// Argmax; ties toward the smallest index (earliest interaction).
size_t select_top(const ScoreVector& scores);

struct Recommendation {
    Tensor logits;            // [vocab], last-position logits
    int64_t retrieved_m = -1; // -1 = no retrieval (empty bank)
    int64_t retrieved_ts = 0;
};

// z_t = pooled null-prefix encode of the window; top-scored z_{m'} is
// injected as the prefix for the scored forward pass. Empty bank falls back
// to the null prefix, which equals the no-memory forward bitwise.
Recommendation recommend_with_memory(const std::vector<std::string>& window_items,
                                     const MemoryBank& bank, const BackboneParams& p,
                                     const ItemVocabulary& vocab, const RetrieverParams& r,
                                     PoolMode pool = PoolMode::last);

// ------------------------------------------------------------- training ----

struct RetrieverTrainExample {
    const Sample* sample = nullptr;
    std::vector<double> labels; // S', aligned with the sample's bank entries
};

struct RetrieverTrainConfig {
    int64_t hidden = 256;
    double lr = 1e-3;
    int64_t batch = 64;
    int64_t epochs = 150;
    int64_t patience = 10; // early stop on val Recall@1
    uint64_t seed = 1;
    int workers = 1;
};

struct RetrieverTrainResult {
    RetrieverParams params;
    int64_t epochs_run = 0;
    int64_t best_epoch = -1;
    double best_val_recall1 = 0.0;
    std::vector<double> epoch_loss; // mean train KL per epoch
};

// KL(S' || S) by Adam over the retriever only; the backbone stays bitwise
// untouched (it is read through const&, and load_backbone marks it frozen).
// Validation Recall@1 is computed with the full recommend path; ranks are
// cached per (sample, retrieved m') since both query and banks are constant.
RetrieverTrainResult train_retriever(const std::vector<RetrieverTrainExample>& train_examples,
                                     const std::vector<const Sample*>& val_samples,
                                     const BankStore& store, const BackboneParams& backbone,
                                     const ItemVocabulary& vocab,
                                     const RetrieverTrainConfig& cfg);

// Retriever checkpoint (container role "retriever"); records the backbone
// checkpoint hash it was trained against.
void save_retriever(const RetrieverParams& r, const std::string& path,
                    const std::string& backbone_hash);
RetrieverParams load_retriever(const std::string& path,
                               const std::string& expected_backbone_hash);

} // namespace mrgr
