#include "mrgr/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>

#include "mrgr/adam.hpp"
#include "mrgr/container_io.hpp"
#include "mrgr/errors.hpp"
#include "mrgr/eval.hpp"
#include "mrgr/hashing.hpp"
#include "mrgr/kernels.hpp"
#include "mrgr/rng.hpp"

namespace mrgr {

namespace {
const uint64_t kInitTag = fnv1a64(std::string("retriever_init"));
const uint64_t kOrderTag = fnv1a64(std::string("retriever_order"));

Tensor uniform_tensor(Rng& rng, std::vector<int64_t> shape, double bound) {
    Tensor t = Tensor::zeros(shape);
    for (int64_t i = 0; i < t.size(); ++i)
        t.data()[i] = (rng.uniform() * 2.0 - 1.0) * bound;
    return t;
}
} // namespace

RetrieverParams RetrieverParams::init(int64_t d_model, int64_t hidden, uint64_t seed) {
    if (d_model < 1 || hidden < 1) throw ShapeError("retriever dims must be positive");
    RetrieverParams r;
    r.d_model = d_model;
    r.hidden = hidden;
    Rng rng(derive_seed(seed, kInitTag));
    const double bound1 = 1.0 / std::sqrt(static_cast<double>(d_model));
    const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    r.w1 = uniform_tensor(rng, {d_model, hidden}, bound1);
    r.b1 = uniform_tensor(rng, {hidden}, bound1);
    r.w2 = uniform_tensor(rng, {hidden, d_model}, bound2);
    r.b2 = uniform_tensor(rng, {d_model}, bound2);
    return r;
}

std::vector<Tensor*> RetrieverParams::all_params() { return {&w1, &b1, &w2, &b2}; }
std::vector<const Tensor*> RetrieverParams::all_params() const { return {&w1, &b1, &w2, &b2}; }
std::vector<std::pair<std::string, Tensor*>> RetrieverParams::named_params() {
    return {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}};
}

Tensor bank_matrix(const MemoryBank& bank) {
    if (bank.entries.empty()) throw EmptyMemoryError("bank_matrix: bank for user " + bank.user);
    const int64_t d = bank.entries[0].z.size();
    Tensor m = Tensor::zeros({static_cast<int64_t>(bank.entries.size()), d});
    for (size_t i = 0; i < bank.entries.size(); ++i) {
        if (bank.entries[i].z.size() != d)
            throw ShapeError("bank_matrix: ragged entry dimensions");
        std::memcpy(m.row(static_cast<int64_t>(i)), bank.entries[i].z.data(),
                    static_cast<size_t>(d) * sizeof(double));
    }
    return m;
}

RetrieverGraph::RetrieverGraph(const RetrieverParams& r, bool with_grads) : r_(r) {
    for (const Tensor* t : r.all_params()) bound_.push_back(tape_.leaf_ref(*t, with_grads));
}

NodeId RetrieverGraph::mlp(NodeId x) {
    NodeId h = tape_.relu(tape_.add_rowvec(tape_.matmul(x, bound_[0]), bound_[1]));
    return tape_.add_rowvec(tape_.matmul(h, bound_[2]), bound_[3]);
}

NodeId RetrieverGraph::scores(NodeId query, NodeId bank_rows) {
    return tape_.softmax(tape_.matmul_nt(query, bank_rows), 1.0);
}

void RetrieverGraph::accumulate_param_grads(std::vector<Tensor>& acc) {
    if (acc.size() != bound_.size())
        throw ShapeError("retriever accumulate_param_grads: accumulator size mismatch");
    for (size_t k = 0; k < bound_.size(); ++k) {
        const Tensor& g = tape_.grad(bound_[k]);
        kern::axpy(static_cast<size_t>(g.size()), 1.0, g.data(), acc[k].data());
    }
}

namespace {

Tensor as_row(const Tensor& v) {
    Tensor r = Tensor::zeros({1, v.size()});
    std::memcpy(r.data(), v.data(), static_cast<size_t>(v.size()) * sizeof(double));
    return r;
}

ScoreVector score_against(const Tensor& z_row, const Tensor& bank_rows,
                          const RetrieverParams& r) {
    RetrieverGraph g(r, false);
    NodeId z = g.tape().leaf_ref(z_row);
    NodeId bank = g.tape().leaf_ref(bank_rows);
    NodeId s = g.scores(g.mlp(z), bank);
    const Tensor& sv = g.tape().val(s);
    return ScoreVector(sv.data(), sv.data() + sv.size());
}

} // namespace

ScoreVector score(const Tensor& z_t, const MemoryBank& bank, const RetrieverParams& r) {
    if (bank.entries.empty())
        throw EmptyMemoryError("score: bank for user " + bank.user + " at cut " +
                               std::to_string(bank.cut));
    if (z_t.size() != r.d_model)
        throw ShapeError("score: query dimension " + std::to_string(z_t.size()) +
                         " != d_model " + std::to_string(r.d_model));
    const Tensor bm = bank_matrix(bank);
    return score_against(as_row(z_t), bm, r);
}

size_t select_top(const ScoreVector& scores) {
    if (scores.empty()) throw EmptyMemoryError("select_top: empty score vector");
    size_t best = 0;
    for (size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
    return best;
}

Recommendation recommend_with_memory(const std::vector<std::string>& window_items,
                                     const MemoryBank& bank, const BackboneParams& p,
                                     const ItemVocabulary& vocab, const RetrieverParams& r,
                                     PoolMode pool) {
    const std::vector<int32_t> tokens = tokenize_prompt(window_items, vocab, p.config);
    Recommendation rec;
    if (bank.entries.empty()) {
        rec.logits = decode_upper(p, encode_lower(p, tokens, nullptr));
        return rec;
    }
    const Tensor z_t = pool_states(encode_lower(p, tokens, nullptr), pool);
    const size_t idx = select_top(score(z_t, bank, r));
    const MemoryEntry& chosen = bank.entries[idx];
    rec.retrieved_m = chosen.m;
    rec.retrieved_ts = chosen.ts;
    rec.logits = decode_upper(p, encode_lower(p, tokens, &chosen.z));
    return rec;
}

// --------------------------------------------------------------- training ----

namespace {

struct PreparedTrain {
    Tensor query;  // [1 x d]
    Tensor bank;   // [M x d]
    Tensor labels; // [1 x M]
};

struct PreparedVal {
    Tensor query;            // [1 x d]
    Tensor bank;             // [M x d], empty tensor when no candidates
    std::vector<size_t> entry_index; // bank row -> entry (identity, kept for clarity)
    MemoryBank bank_full;
    std::vector<int32_t> tokens;
    int32_t target_token = -1;
    std::unordered_map<int64_t, int64_t> rank_by_choice; // m' (-1 = none) -> rank
};

} // namespace

RetrieverTrainResult train_retriever(const std::vector<RetrieverTrainExample>& train_examples,
                                     const std::vector<const Sample*>& val_samples,
                                     const BankStore& store, const BackboneParams& backbone,
                                     const ItemVocabulary& vocab,
                                     const RetrieverTrainConfig& cfg) {
    if (train_examples.empty()) throw UsageError("train_retriever: no training examples");
    const int64_t d = backbone.config.d_model;
    const PoolMode pool = store.pool();

    // Backbone and banks are frozen, so every query/bank/label is constant:
    // encode them once up front.
    std::vector<PreparedTrain> prep(train_examples.size());
    for (size_t i = 0; i < train_examples.size(); ++i) {
        const RetrieverTrainExample& ex = train_examples[i];
        const Sample& s = *ex.sample;
        MemoryBank bank = store.bank_for(s);
        if (bank.entries.empty())
            throw ShapeError("train_retriever: sample " + s.sample_id + " has an empty bank");
        if (ex.labels.size() != bank.entries.size())
            throw ShapeError("train_retriever: sample " + s.sample_id + " has " +
                             std::to_string(ex.labels.size()) + " labels for " +
                             std::to_string(bank.entries.size()) + " bank entries");
        prep[i].query = as_row(pool_states(
            encode_lower(backbone, tokenize_prompt(s.window_items, vocab, backbone.config),
                         nullptr),
            pool));
        prep[i].bank = bank_matrix(bank);
        Tensor lab = Tensor::zeros({1, static_cast<int64_t>(ex.labels.size())});
        std::memcpy(lab.data(), ex.labels.data(), ex.labels.size() * sizeof(double));
        prep[i].labels = std::move(lab);
    }

    std::vector<PreparedVal> vals(val_samples.size());
    for (size_t i = 0; i < val_samples.size(); ++i) {
        const Sample& s = *val_samples[i];
        PreparedVal& pv = vals[i];
        pv.tokens = tokenize_prompt(s.window_items, vocab, backbone.config);
        pv.target_token = vocab.contains(s.target_item) ? vocab.token_of(s.target_item) : -1;
        pv.bank_full = store.bank_for(s);
        pv.query = as_row(pool_states(encode_lower(backbone, pv.tokens, nullptr), pool));
        if (!pv.bank_full.entries.empty()) pv.bank = bank_matrix(pv.bank_full);
    }

    auto val_recall1 = [&](const RetrieverParams& r) -> double {
        if (vals.empty()) return 0.0;
        int64_t hits = 0, counted = 0;
        for (PreparedVal& pv : vals) {
            if (pv.target_token < 0) continue; // target unseen in training vocab
            ++counted;
            int64_t choice = -1;
            const MemoryEntry* chosen = nullptr;
            if (!pv.bank_full.entries.empty()) {
                const size_t idx = select_top(score_against(pv.query, pv.bank, r));
                chosen = &pv.bank_full.entries[idx];
                choice = chosen->m;
            }
            auto it = pv.rank_by_choice.find(choice);
            int64_t rank;
            if (it != pv.rank_by_choice.end()) {
                rank = it->second;
            } else {
                const Tensor logits = decode_upper(
                    backbone, encode_lower(backbone, pv.tokens, chosen ? &chosen->z : nullptr));
                rank = rank_from_logits(logits, pv.target_token);
                pv.rank_by_choice.emplace(choice, rank);
            }
            if (rank == 1) ++hits;
        }
        return counted == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(counted);
    };

    RetrieverParams params = RetrieverParams::init(d, cfg.hidden, cfg.seed);
    AdamState adam;
    adam.init(params.all_params(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

    RetrieverTrainResult result;
    RetrieverParams best = params;
    const bool early_stop = !vals.empty();
    double best_recall = -1.0;
    int64_t bad_epochs = 0;

    std::vector<size_t> order(train_examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, kOrderTag, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        for (size_t b0 = 0; b0 < order.size(); b0 += static_cast<size_t>(cfg.batch)) {
            const size_t b1 = std::min(order.size(), b0 + static_cast<size_t>(cfg.batch));
            const double inv = 1.0 / static_cast<double>(b1 - b0);
            std::vector<Tensor> acc;
            for (Tensor* t : params.all_params()) acc.push_back(Tensor::zeros(t->shape()));
            for (size_t k = b0; k < b1; ++k) {
                const PreparedTrain& pt = prep[order[k]];
                RetrieverGraph g(params, true);
                NodeId z = g.tape().leaf_ref(pt.query);
                NodeId bank = g.tape().leaf_ref(pt.bank);
                NodeId labels = g.tape().leaf_ref(pt.labels);
                NodeId kl = g.tape().kl_div(labels, g.scores(g.mlp(z), bank));
                loss_sum += g.tape().val(kl).data()[0];
                g.tape().backward(g.tape().scale(kl, inv));
                g.accumulate_param_grads(acc);
            }
            adam_step(params.all_params(), acc, adam);
        }
        result.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
        result.epochs_run = epoch + 1;

        if (early_stop) {
            const double recall = val_recall1(params);
            if (recall > best_recall) {
                best_recall = recall;
                best = params;
                result.best_epoch = epoch;
                bad_epochs = 0;
            } else if (++bad_epochs >= cfg.patience) {
                break;
            }
        }
    }

    if (early_stop) {
        result.params = std::move(best);
        result.best_val_recall1 = best_recall;
    } else {
        result.params = std::move(params);
        result.best_epoch = result.epochs_run - 1;
    }
    return result;
}

// ------------------------------------------------------------ persistence ----

void save_retriever(const RetrieverParams& r, const std::string& path,
                    const std::string& backbone_hash) {
    Json meta;
    meta["role"] = "retriever";
    meta["d_model"] = r.d_model;
    meta["hidden"] = r.hidden;
    meta["backbone_hash"] = backbone_hash;
    std::vector<NamedTensor> tensors;
    RetrieverParams& mut = const_cast<RetrieverParams&>(r);
    for (auto& [name, t] : mut.named_params()) tensors.push_back(NamedTensor{name, t});
    write_container(path, MAGIC_CHECKPOINT, meta, tensors);
}

RetrieverParams load_retriever(const std::string& path,
                               const std::string& expected_backbone_hash) {
    LoadedContainer c = read_container(path, MAGIC_CHECKPOINT);
    try {
        if (c.meta.at("role").get<std::string>() != "retriever")
            throw FormatError(path + ": container role is not 'retriever'");
        const std::string have = c.meta.at("backbone_hash").get<std::string>();
        if (!expected_backbone_hash.empty() && have != expected_backbone_hash)
            throw StaleArtifactError("retriever " + path + " was trained against checkpoint " +
                                     have + " but the current checkpoint hashes to " +
                                     expected_backbone_hash + "; rerun train-retriever");
        RetrieverParams r;
        r.d_model = c.meta.at("d_model").get<int64_t>();
        r.hidden = c.meta.at("hidden").get<int64_t>();
        r.w1 = c.tensor("w1");
        r.b1 = c.tensor("b1");
        r.w2 = c.tensor("w2");
        r.b2 = c.tensor("b2");
        if (r.w1.rows() != r.d_model || r.w1.cols() != r.hidden || r.b1.size() != r.hidden ||
            r.w2.rows() != r.hidden || r.w2.cols() != r.d_model || r.b2.size() != r.d_model)
            throw FormatError(path + ": retriever tensor shapes disagree with meta");
        return r;
    } catch (const Json::exception& e) {
        throw FormatError(path + ": bad retriever manifest (" + e.what() + ")");
    }
}

} // namespace mrgr
