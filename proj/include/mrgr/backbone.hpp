#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mrgr/rng.hpp"
#include "mrgr/tape.hpp"
#include "mrgr/tensor.hpp"

namespace mrgr {

// Reserved token ids. Position 0 of every prompt is the prefix slot: it holds
// the NULL_PREFIX embedding by default and is overwritten in-place when a
// memory vector is injected, so prefixed and unprefixed runs see identical
// positions for the actual items.
inline constexpr int32_t TOK_NULL_PREFIX = 0;
inline constexpr int32_t TOK_PRED = 1;
inline constexpr int32_t N_SPECIAL_TOKENS = 2;

struct ModelConfig {
    int64_t vocab_size = 0; // total tokens including the special rows
    int64_t d_model = 64;
    int64_t n_layers = 4;
    int64_t split_layer = 2; // L; encode_lower applies layers 1..L
    int64_t n_heads = 4;
    int64_t ff_dim = 128;
    int64_t max_seq_len = 16;
    double dropout = 0.0;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Bidirectional item-id <-> token map. Token ids are assigned in sorted item
// order starting after the special tokens, so the mapping is a pure function
// of the item set. Items are single tokens; the sequence-level code paths
// (sequence_prob, NLL) still handle multi-token targets.
class ItemVocabulary {
public:
    ItemVocabulary() = default;
    static ItemVocabulary build(std::vector<std::string> items);

    int64_t item_count() const { return static_cast<int64_t>(items_.size()); }
    int64_t token_count() const { return item_count() + N_SPECIAL_TOKENS; }
    bool contains(const std::string& item) const { return index_.count(item) > 0; }
    int32_t token_of(const std::string& item) const;
    const std::string& item_of(int32_t token) const;
    const std::vector<std::string>& items() const { return items_; }

    void save(const std::string& path) const;
    static ItemVocabulary load(const std::string& path);

private:
    std::vector<std::string> items_; // sorted
    std::unordered_map<std::string, int32_t> index_;
};

struct LayerParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
};

struct BackboneParams {
    ModelConfig config;
    Tensor tok_emb; // [vocab x d]
    Tensor pos_emb; // [max_seq_len x d]
    std::vector<LayerParams> layers;
    Tensor lnf_g, lnf_b;
    Tensor w_out, b_out; // [d x vocab], [vocab]
    bool frozen = false;

    static BackboneParams init(const ModelConfig& cfg, uint64_t seed);
    std::vector<Tensor*> all_params();
    std::vector<const Tensor*> all_params() const;
    std::vector<std::pair<std::string, Tensor*>> named_params();
    int64_t param_count() const;
};

// Layer-L states plus everything needed to extend the sequence under teacher
// forcing (the prompt tokens and any injected prefix vector).
struct HiddenSeq {
    int64_t layer = 0;
    Tensor states; // [T x d]
    std::vector<int32_t> tokens;
    Tensor prefix; // empty when the null prefix was used
};

// [prefix slot] + item tokens + [PRED]. Window must leave room for both
// reserved slots under max_seq_len.
std::vector<int32_t> tokenize_prompt(const std::vector<std::string>& window,
                                     const ItemVocabulary& vocab, const ModelConfig& cfg);

// ------------------------------------------------------------ graph build ----

// Records one forward pass on a tape, binding every parameter tensor as a
// leaf. Both the gradient-free inference wrappers and the training loop use
// this builder, so there is exactly one forward implementation and split /
// monolithic runs agree bitwise by construction.
class BackboneGraph {
public:
    BackboneGraph(const BackboneParams& p, bool with_grads);

    Tape& tape() { return tape_; }

    // Embedding + prefix slot + positions (+ input dropout when training).
    NodeId embed(const std::vector<int32_t>& tokens, const Tensor* prefix_vector, Rng* drop_rng);
    // Same composition, but the prefix comes from a node already on this tape,
    // so gradients flow back into whatever produced it (prefix-exposure
    // training encodes the exposure window in-graph through the lower layers).
    NodeId embed_prefix_node(const std::vector<int32_t>& tokens, NodeId prefix_node, Rng* drop_rng);
    // Residual blocks [from, upto) applied in order.
    NodeId blocks(NodeId x, int64_t from, int64_t upto, Rng* drop_rng);
    NodeId final_norm(NodeId x);
    // Slice rows [r0, r0+n) then project to vocab logits.
    NodeId logits_rows(NodeId normed, int64_t r0, int64_t n);

    // acc[k] += d loss / d param_k, aligned with BackboneParams::all_params().
    void accumulate_param_grads(std::vector<Tensor>& acc);

private:
    NodeId block(NodeId x, int64_t layer_index, Rng* drop_rng);
    NodeId maybe_dropout(NodeId x, Rng* drop_rng);

    const BackboneParams& p_;
    bool grads_;
    Tape tape_;
    std::vector<NodeId> bound_; // aligned with all_params()
};

// ------------------------------------------------------------- inference ----

// Embedding + layers 1..L with causal masking, no gradients. prefix_vector,
// when given, must be a d_model vector; it replaces the prefix slot.
HiddenSeq encode_lower(const BackboneParams& p, const std::vector<int32_t>& tokens,
                       const Tensor* prefix_vector);

// Layers L+1..n plus final norm and projection; logits at the last position.
Tensor decode_upper(const BackboneParams& p, const HiddenSeq& states);

// Product over target tokens of their teacher-forced probabilities,
// extending the prompt one token at a time past the first.
double sequence_prob(const BackboneParams& p, const HiddenSeq& states,
                     const std::vector<int32_t>& target);

// Monolithic forward (no split): logits at the last position. Used by the
// split-consistency tests.
Tensor full_forward_logits(const BackboneParams& p, const std::vector<int32_t>& tokens,
                           const Tensor* prefix_vector);

} // namespace mrgr
