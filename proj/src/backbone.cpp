#include "mrgr/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mrgr/json.hpp"

#include "mrgr/errors.hpp"
#include "mrgr/hashing.hpp"
#include "mrgr/kernels.hpp"

namespace mrgr {

using nlohmann::json;

// ------------------------------------------------------------ ModelConfig ----

void ModelConfig::validate() const {
    if (vocab_size < N_SPECIAL_TOKENS + 1) {
        throw ShapeError("model: vocab_size must cover special tokens plus at least one item");
    }
    if (d_model < 1 || n_heads < 1 || ff_dim < 1) throw ShapeError("model: dimensions must be positive");
    if (d_model % n_heads != 0) {
        throw ShapeError("model: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                         std::to_string(n_heads));
    }
    if (n_layers < 2) throw ShapeError("model: need at least 2 layers to split");
    if (split_layer < 1 || split_layer >= n_layers) {
        throw ShapeError("model: split_layer must be strictly interior (1 <= L < n_layers)");
    }
    if (max_seq_len < 12) {
        throw ShapeError("model: max_seq_len must be >= 12 (10-item window + prefix + prediction slots)");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ShapeError("model: dropout must be in [0, 1)");
}

// --------------------------------------------------------- ItemVocabulary ----

ItemVocabulary ItemVocabulary::build(std::vector<std::string> items) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    ItemVocabulary v;
    for (const std::string& it : items) {
        if (it.empty()) throw FormatError("vocabulary: empty item id");
    }
    v.items_ = std::move(items);
    v.index_.reserve(v.items_.size());
    for (size_t i = 0; i < v.items_.size(); ++i) {
        v.index_[v.items_[i]] = static_cast<int32_t>(i) + N_SPECIAL_TOKENS;
    }
    return v;
}

int32_t ItemVocabulary::token_of(const std::string& item) const {
    auto it = index_.find(item);
    if (it == index_.end()) throw FormatError("unknown item id '" + item + "'");
    return it->second;
}

const std::string& ItemVocabulary::item_of(int32_t token) const {
    int64_t idx = static_cast<int64_t>(token) - N_SPECIAL_TOKENS;
    if (idx < 0 || idx >= item_count()) {
        throw ShapeError("token " + std::to_string(token) + " is not an item token");
    }
    return items_[static_cast<size_t>(idx)];
}

void ItemVocabulary::save(const std::string& path) const {
    json j;
    j["items"] = items_;
    j["n_special_tokens"] = N_SPECIAL_TOKENS;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write vocabulary file: " + path);
    out << j.dump(2) << "\n";
    if (!out.good()) throw IoError("failed writing vocabulary file: " + path);
}

ItemVocabulary ItemVocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vocabulary file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("vocabulary file " + path + ": " + e.what());
    }
    if (!j.contains("items") || !j["items"].is_array()) {
        throw FormatError("vocabulary file " + path + ": missing 'items' array");
    }
    std::vector<std::string> items;
    for (const auto& it : j["items"]) {
        if (!it.is_string()) throw FormatError("vocabulary file " + path + ": non-string item");
        items.push_back(it.get<std::string>());
    }
    ItemVocabulary v = build(std::move(items));
    if (v.items_.size() != j["items"].size()) {
        throw FormatError("vocabulary file " + path + ": duplicate or unsorted items");
    }
    return v;
}

// --------------------------------------------------------- BackboneParams ----

namespace {

void fill_normal(Tensor& t, Rng& rng, double stddev) {
    for (int64_t i = 0; i < t.size(); ++i) t.at(i) = rng.normal() * stddev;
}

} // namespace

BackboneParams BackboneParams::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    BackboneParams p;
    p.config = cfg;
    Rng rng(derive_seed(seed, fnv1a64("backbone_init")));
    const double emb_std = 0.02;
    const int64_t d = cfg.d_model;

    p.tok_emb = Tensor({cfg.vocab_size, d});
    fill_normal(p.tok_emb, rng, emb_std);
    p.pos_emb = Tensor({cfg.max_seq_len, d});
    fill_normal(p.pos_emb, rng, emb_std);

    p.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (LayerParams& lp : p.layers) {
        lp.ln1_g = Tensor::full({d}, 1.0);
        lp.ln1_b = Tensor({d});
        lp.wq = Tensor({d, d});
        fill_normal(lp.wq, rng, emb_std);
        lp.bq = Tensor({d});
        lp.wk = Tensor({d, d});
        fill_normal(lp.wk, rng, emb_std);
        lp.bk = Tensor({d});
        lp.wv = Tensor({d, d});
        fill_normal(lp.wv, rng, emb_std);
        lp.bv = Tensor({d});
        lp.wo = Tensor({d, d});
        fill_normal(lp.wo, rng, emb_std);
        lp.bo = Tensor({d});
        lp.ln2_g = Tensor::full({d}, 1.0);
        lp.ln2_b = Tensor({d});
        lp.w1 = Tensor({d, cfg.ff_dim});
        fill_normal(lp.w1, rng, emb_std);
        lp.b1 = Tensor({cfg.ff_dim});
        lp.w2 = Tensor({cfg.ff_dim, d});
        fill_normal(lp.w2, rng, emb_std);
        lp.b2 = Tensor({d});
    }

    p.lnf_g = Tensor::full({d}, 1.0);
    p.lnf_b = Tensor({d});
    p.w_out = Tensor({d, cfg.vocab_size});
    fill_normal(p.w_out, rng, emb_std);
    p.b_out = Tensor({cfg.vocab_size});
    return p;
}

std::vector<Tensor*> BackboneParams::all_params() {
    std::vector<Tensor*> out;
    out.reserve(6 + layers.size() * 16);
    out.push_back(&tok_emb);
    out.push_back(&pos_emb);
    for (LayerParams& lp : layers) {
        out.push_back(&lp.ln1_g);
        out.push_back(&lp.ln1_b);
        out.push_back(&lp.wq);
        out.push_back(&lp.bq);
        out.push_back(&lp.wk);
        out.push_back(&lp.bk);
        out.push_back(&lp.wv);
        out.push_back(&lp.bv);
        out.push_back(&lp.wo);
        out.push_back(&lp.bo);
        out.push_back(&lp.ln2_g);
        out.push_back(&lp.ln2_b);
        out.push_back(&lp.w1);
        out.push_back(&lp.b1);
        out.push_back(&lp.w2);
        out.push_back(&lp.b2);
    }
    out.push_back(&lnf_g);
    out.push_back(&lnf_b);
    out.push_back(&w_out);
    out.push_back(&b_out);
    return out;
}

std::vector<const Tensor*> BackboneParams::all_params() const {
    auto mut = const_cast<BackboneParams*>(this)->all_params();
    return std::vector<const Tensor*>(mut.begin(), mut.end());
}

std::vector<std::pair<std::string, Tensor*>> BackboneParams::named_params() {
    static const char* layer_names[16] = {"ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv",
                                          "wo",    "bo",    "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"};
    std::vector<std::pair<std::string, Tensor*>> out;
    auto params = all_params();
    size_t k = 0;
    out.emplace_back("tok_emb", params[k++]);
    out.emplace_back("pos_emb", params[k++]);
    for (size_t l = 0; l < layers.size(); ++l) {
        for (const char* nm : layer_names) {
            out.emplace_back("layer" + std::to_string(l) + "." + nm, params[k++]);
        }
    }
    out.emplace_back("lnf_g", params[k++]);
    out.emplace_back("lnf_b", params[k++]);
    out.emplace_back("w_out", params[k++]);
    out.emplace_back("b_out", params[k++]);
    return out;
}

int64_t BackboneParams::param_count() const {
    int64_t n = 0;
    for (const Tensor* t : all_params()) n += t->size();
    return n;
}

// --------------------------------------------------------- tokenize_prompt ----

std::vector<int32_t> tokenize_prompt(const std::vector<std::string>& window,
                                     const ItemVocabulary& vocab, const ModelConfig& cfg) {
    if (static_cast<int64_t>(window.size()) + 2 > cfg.max_seq_len) {
        throw ShapeError("tokenize_prompt: window of " + std::to_string(window.size()) +
                         " items does not fit max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    std::vector<int32_t> toks;
    toks.reserve(window.size() + 2);
    toks.push_back(TOK_NULL_PREFIX);
    for (const std::string& item : window) toks.push_back(vocab.token_of(item));
    toks.push_back(TOK_PRED);
    return toks;
}

// ----------------------------------------------------------- BackboneGraph ----

BackboneGraph::BackboneGraph(const BackboneParams& p, bool with_grads) : p_(p), grads_(with_grads) {
    p_.config.validate();
    if (with_grads && p_.frozen) {
        throw NumericError("cannot build a gradient graph over frozen backbone parameters");
    }
    auto params = p_.all_params();
    bound_.reserve(params.size());
    for (const Tensor* t : params) {
        bound_.push_back(tape_.leaf_ref(*t, grads_));
    }
}

NodeId BackboneGraph::maybe_dropout(NodeId x, Rng* drop_rng) {
    const double p = p_.config.dropout;
    if (p <= 0.0 || drop_rng == nullptr) return x;
    const Tensor& v = tape_.val(x);
    Tensor mask(v.shape());
    const double keep_scale = 1.0 / (1.0 - p);
    for (int64_t i = 0; i < mask.size(); ++i) {
        mask.at(i) = drop_rng->uniform() >= p ? keep_scale : 0.0;
    }
    return tape_.mul_mask(x, std::move(mask));
}

NodeId BackboneGraph::embed(const std::vector<int32_t>& tokens, const Tensor* prefix_vector,
                            Rng* drop_rng) {
    const int64_t t_len = static_cast<int64_t>(tokens.size());
    if (t_len < 2) throw ShapeError("embed: prompt needs at least the prefix and prediction slots");
    if (t_len > p_.config.max_seq_len) {
        throw ShapeError("embed: sequence length " + std::to_string(t_len) + " exceeds max_seq_len " +
                         std::to_string(p_.config.max_seq_len));
    }
    for (int32_t tok : tokens) {
        if (tok < 0 || tok >= p_.config.vocab_size) {
            throw ShapeError("embed: token " + std::to_string(tok) + " out of vocabulary");
        }
    }
    NodeId e = tape_.embedding_rows(bound_[0], tokens);
    if (prefix_vector != nullptr) {
        if (prefix_vector->size() != p_.config.d_model) {
            throw ShapeError("embed: prefix vector " + prefix_vector->shape_str() + " is not d_model");
        }
        NodeId pv = tape_.leaf(*prefix_vector, false); // injected memories are data, not parameters
        e = tape_.replace_row0(e, pv);
    }
    NodeId pos = tape_.slice_rows(bound_[1], 0, t_len);
    NodeId x = tape_.add(e, pos);
    return maybe_dropout(x, drop_rng);
}

NodeId BackboneGraph::embed_prefix_node(const std::vector<int32_t>& tokens, NodeId prefix_node,
                                        Rng* drop_rng) {
    const int64_t t_len = static_cast<int64_t>(tokens.size());
    if (t_len < 2) throw ShapeError("embed: prompt needs at least the prefix and prediction slots");
    if (t_len > p_.config.max_seq_len) {
        throw ShapeError("embed: sequence length " + std::to_string(t_len) + " exceeds max_seq_len " +
                         std::to_string(p_.config.max_seq_len));
    }
    for (int32_t tok : tokens) {
        if (tok < 0 || tok >= p_.config.vocab_size) {
            throw ShapeError("embed: token " + std::to_string(tok) + " out of vocabulary");
        }
    }
    if (tape_.val(prefix_node).size() != p_.config.d_model) {
        throw ShapeError("embed: prefix node " + tape_.val(prefix_node).shape_str() +
                         " is not d_model");
    }
    NodeId e = tape_.embedding_rows(bound_[0], tokens);
    e = tape_.replace_row0(e, prefix_node);
    NodeId pos = tape_.slice_rows(bound_[1], 0, t_len);
    NodeId x = tape_.add(e, pos);
    return maybe_dropout(x, drop_rng);
}

NodeId BackboneGraph::block(NodeId x, int64_t layer_index, Rng* drop_rng) {
    const size_t base = 2 + static_cast<size_t>(layer_index) * 16;
    const NodeId ln1_g = bound_[base + 0], ln1_b = bound_[base + 1];
    const NodeId wq = bound_[base + 2], bq = bound_[base + 3];
    const NodeId wk = bound_[base + 4], bk = bound_[base + 5];
    const NodeId wv = bound_[base + 6], bv = bound_[base + 7];
    const NodeId wo = bound_[base + 8], bo = bound_[base + 9];
    const NodeId ln2_g = bound_[base + 10], ln2_b = bound_[base + 11];
    const NodeId w1 = bound_[base + 12], b1 = bound_[base + 13];
    const NodeId w2 = bound_[base + 14], b2 = bound_[base + 15];

    const int64_t d = p_.config.d_model;
    const int64_t heads = p_.config.n_heads;
    const int64_t dh = d / heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // pre-norm attention
    NodeId h = tape_.layer_norm(x, ln1_g, ln1_b);
    NodeId q = tape_.add_rowvec(tape_.matmul(h, wq), bq);
    NodeId k = tape_.add_rowvec(tape_.matmul(h, wk), bk);
    NodeId v = tape_.add_rowvec(tape_.matmul(h, wv), bv);
    std::vector<NodeId> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int64_t hd = 0; hd < heads; ++hd) {
        NodeId qh = tape_.slice_cols(q, hd * dh, dh);
        NodeId kh = tape_.slice_cols(k, hd * dh, dh);
        NodeId vh = tape_.slice_cols(v, hd * dh, dh);
        NodeId att = tape_.causal_softmax_rows(tape_.scale(tape_.matmul_nt(qh, kh), att_scale));
        head_outs.push_back(tape_.matmul(att, vh));
    }
    NodeId o = tape_.concat_cols(head_outs);
    o = tape_.add_rowvec(tape_.matmul(o, wo), bo);
    o = maybe_dropout(o, drop_rng);
    x = tape_.add(x, o);

    // pre-norm feed-forward
    NodeId h2 = tape_.layer_norm(x, ln2_g, ln2_b);
    NodeId f = tape_.relu(tape_.add_rowvec(tape_.matmul(h2, w1), b1));
    f = tape_.add_rowvec(tape_.matmul(f, w2), b2);
    f = maybe_dropout(f, drop_rng);
    return tape_.add(x, f);
}

NodeId BackboneGraph::blocks(NodeId x, int64_t from, int64_t upto, Rng* drop_rng) {
    if (from < 0 || upto > p_.config.n_layers || from > upto) {
        throw ShapeError("blocks: bad layer range [" + std::to_string(from) + "," +
                         std::to_string(upto) + ")");
    }
    for (int64_t l = from; l < upto; ++l) x = block(x, l, drop_rng);
    return x;
}

NodeId BackboneGraph::final_norm(NodeId x) {
    const size_t base = 2 + static_cast<size_t>(p_.config.n_layers) * 16;
    return tape_.layer_norm(x, bound_[base], bound_[base + 1]);
}

NodeId BackboneGraph::logits_rows(NodeId normed, int64_t r0, int64_t n) {
    const size_t base = 2 + static_cast<size_t>(p_.config.n_layers) * 16;
    NodeId rows = tape_.slice_rows(normed, r0, n);
    return tape_.add_rowvec(tape_.matmul(rows, bound_[base + 2]), bound_[base + 3]);
}

void BackboneGraph::accumulate_param_grads(std::vector<Tensor>& acc) {
    if (acc.size() != bound_.size()) {
        throw ShapeError("accumulate_param_grads: accumulator size mismatch");
    }
    for (size_t k = 0; k < bound_.size(); ++k) {
        const Tensor& g = tape_.grad(bound_[k]);
        kern::axpy(static_cast<size_t>(g.size()), 1.0, g.data(), acc[k].data());
    }
}

// -------------------------------------------------------------- inference ----

HiddenSeq encode_lower(const BackboneParams& p, const std::vector<int32_t>& tokens,
                       const Tensor* prefix_vector) {
    BackboneGraph g(p, false);
    NodeId x = g.embed(tokens, prefix_vector, nullptr);
    x = g.blocks(x, 0, p.config.split_layer, nullptr);
    HiddenSeq hs;
    hs.layer = p.config.split_layer;
    hs.states = g.tape().val(x);
    hs.tokens = tokens;
    if (prefix_vector != nullptr) hs.prefix = *prefix_vector;
    return hs;
}

Tensor decode_upper(const BackboneParams& p, const HiddenSeq& states) {
    if (states.layer != p.config.split_layer) {
        throw ShapeError("decode_upper: states were taken at layer " + std::to_string(states.layer) +
                         ", expected split layer " + std::to_string(p.config.split_layer));
    }
    if (states.states.rows() < 1 || states.states.cols() != p.config.d_model) {
        throw ShapeError("decode_upper: bad states shape " + states.states.shape_str());
    }
    BackboneGraph g(p, false);
    NodeId x = g.tape().leaf(states.states, false);
    x = g.blocks(x, p.config.split_layer, p.config.n_layers, nullptr);
    x = g.final_norm(x);
    NodeId lg = g.logits_rows(x, states.states.rows() - 1, 1);
    const Tensor& row = g.tape().val(lg); // [1 x vocab]
    Tensor out({p.config.vocab_size});
    std::memcpy(out.data(), row.data(), static_cast<size_t>(row.size()) * sizeof(double));
    return out;
}

double sequence_prob(const BackboneParams& p, const HiddenSeq& states,
                     const std::vector<int32_t>& target) {
    if (target.empty()) throw ShapeError("sequence_prob: empty target");
    for (int32_t tok : target) {
        if (tok < 0 || tok >= p.config.vocab_size) {
            throw ShapeError("sequence_prob: target token " + std::to_string(tok) +
                             " out of vocabulary");
        }
    }
    Tensor probs = decode_upper(p, states);
    softmax_rows_inplace(probs, 1.0);
    double prob = probs.at(target[0]);

    if (target.size() > 1) {
        if (states.tokens.empty()) {
            throw ShapeError("sequence_prob: states carry no tokens; cannot extend the sequence");
        }
        const Tensor* prefix = states.prefix.empty() ? nullptr : &states.prefix;
        std::vector<int32_t> toks = states.tokens;
        for (size_t i = 1; i < target.size(); ++i) {
            toks.push_back(target[i - 1]);
            HiddenSeq hs = encode_lower(p, toks, prefix);
            Tensor pr = decode_upper(p, hs);
            softmax_rows_inplace(pr, 1.0);
            prob *= pr.at(target[i]);
        }
    }
    if (!(prob > 0.0) || prob > 1.0) {
        throw NumericError("sequence_prob: probability " + std::to_string(prob) + " outside (0,1]");
    }
    return prob;
}

Tensor full_forward_logits(const BackboneParams& p, const std::vector<int32_t>& tokens,
                           const Tensor* prefix_vector) {
    BackboneGraph g(p, false);
    NodeId x = g.embed(tokens, prefix_vector, nullptr);
    x = g.blocks(x, 0, p.config.n_layers, nullptr);
    x = g.final_norm(x);
    NodeId lg = g.logits_rows(x, static_cast<int64_t>(tokens.size()) - 1, 1);
    const Tensor& row = g.tape().val(lg);
    Tensor out({p.config.vocab_size});
    std::memcpy(out.data(), row.data(), static_cast<size_t>(row.size()) * sizeof(double));
    return out;
}

} // namespace mrgr
