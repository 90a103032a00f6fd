#include "mrgr/training.hpp"

#include <algorithm>
#include <limits>
#include <optional>

#include "mrgr/adam.hpp"
#include "mrgr/errors.hpp"
#include "mrgr/eval.hpp"
#include "mrgr/hashing.hpp"
#include "mrgr/kernels.hpp"
#include "mrgr/rng.hpp"
#include "mrgr/threading.hpp"

namespace mrgr {

namespace {

const uint64_t kOrderTag = fnv1a64(std::string("backbone_order"));
const uint64_t kPrefixTag = fnv1a64(std::string("backbone_prefix"));
const uint64_t kValPrefixTag = fnv1a64(std::string("backbone_val_prefix"));

struct PreparedSample {
    const Sample* sample = nullptr;
    const UserSequence* seq = nullptr;
    std::vector<int32_t> prompt;
    int32_t target = -1;
    uint64_t id_hash = 0;
};

} // namespace

BackboneTrainResult train_backbone(const std::vector<const Sample*>& train_samples,
                                   const std::vector<const Sample*>& val_samples,
                                   const SequenceIndex& seqs, const ItemVocabulary& vocab,
                                   const BackboneTrainConfig& cfg) {
    ModelConfig model = cfg.model;
    model.vocab_size = vocab.token_count();
    model.validate();
    if (cfg.batch < 1) throw UsageError("train_backbone: batch must be >= 1");
    if (cfg.epochs < 1) throw UsageError("train_backbone: epochs must be >= 1");
    if (!(cfg.p_prefix >= 0.0 && cfg.p_prefix <= 1.0))
        throw UsageError("train_backbone: p_prefix must be in [0,1]");

    auto prepare = [&](const std::vector<const Sample*>& in) {
        std::vector<PreparedSample> out;
        for (const Sample* s : in) {
            if (!vocab.contains(s->target_item)) continue; // unseen target: not trainable
            PreparedSample ps;
            ps.sample = s;
            ps.seq = &seqs.by_user(s->user);
            ps.prompt = tokenize_prompt(s->window_items, vocab, model);
            ps.target = vocab.token_of(s->target_item);
            ps.id_hash = fnv1a64(s->sample_id);
            out.push_back(std::move(ps));
        }
        return out;
    };
    const std::vector<PreparedSample> train = prepare(train_samples);
    const std::vector<PreparedSample> val = prepare(val_samples);
    if (train.empty()) throw UsageError("train_backbone: no trainable samples");

    BackboneParams params = BackboneParams::init(model, cfg.seed);
    AdamState adam;
    adam.init(params.all_params(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    const size_t n_params = params.all_params().size();

    // Fixed per-sample prefix choices for the validation metric.
    std::vector<int64_t> val_prefix_m(val.size(), -1);
    for (size_t i = 0; i < val.size(); ++i) {
        const Sample& s = *val[i].sample;
        if (s.n_cands <= 0) continue;
        Rng rng(derive_seed(cfg.seed, kValPrefixTag, val[i].id_hash));
        val_prefix_m[i] = s.cand_lo + static_cast<int64_t>(
                                          rng.below(static_cast<uint64_t>(s.n_cands)));
    }

    auto val_recall1 = [&]() -> double {
        if (val.empty()) return 0.0;
        std::vector<char> hit(val.size(), 0);
        parallel_chunks(val.size(), 8, cfg.workers, [&](size_t lo, size_t hi) {
            for (size_t i = lo; i < hi; ++i) {
                std::optional<Tensor> prefix;
                if (val_prefix_m[i] >= 0)
                    prefix = encode_memory_vector(*val[i].seq, val_prefix_m[i], params, vocab,
                                                  cfg.short_window, cfg.pool, cfg.encode);
                const Tensor logits = decode_upper(
                    params,
                    encode_lower(params, val[i].prompt, prefix ? &*prefix : nullptr));
                hit[i] = rank_from_logits(logits, val[i].target) == 1;
            }
        });
        int64_t hits = 0;
        for (char h : hit) hits += h;
        return static_cast<double>(hits) / static_cast<double>(val.size());
    };

    BackboneTrainResult result;
    BackboneParams best = params;
    const bool early_stop = !val.empty();
    double best_recall = -1.0;
    int64_t bad_epochs = 0;

    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    constexpr size_t kGradChunk = 8; // fixed fold boundaries, any worker count

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, kOrderTag, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        for (size_t b0 = 0; b0 < order.size(); b0 += static_cast<size_t>(cfg.batch)) {
            const size_t bsz = std::min(order.size() - b0, static_cast<size_t>(cfg.batch));
            const double inv = 1.0 / static_cast<double>(bsz);
            const size_t n_chunks = (bsz + kGradChunk - 1) / kGradChunk;

            std::vector<std::vector<Tensor>> chunk_acc(n_chunks);
            std::vector<double> chunk_loss(n_chunks, 0.0);
            parallel_chunks(bsz, kGradChunk, cfg.workers, [&](size_t lo, size_t hi) {
                const size_t ci = lo / kGradChunk;
                std::vector<Tensor>& acc = chunk_acc[ci];
                for (const Tensor* t : params.all_params()) acc.push_back(Tensor::zeros(t->shape()));
                for (size_t k = lo; k < hi; ++k) {
                    const PreparedSample& ps = train[order[b0 + k]];
                    const Sample& s = *ps.sample;
                    Rng rng(derive_seed(cfg.seed, kPrefixTag,
                                        static_cast<uint64_t>(epoch), ps.id_hash));
                    Rng* drop_rng = model.dropout > 0.0 ? &rng : nullptr;
                    BackboneGraph g(params, true);
                    // Prefix exposure is built in-graph: the exposure window is
                    // encoded through the lower layers on the same tape, so the
                    // encoder is trained to surface whatever the upper layers
                    // need to read out of an injected memory.
                    std::optional<NodeId> prefix_node;
                    if (s.n_cands > 0 && rng.uniform() < cfg.p_prefix) {
                        const int64_t m =
                            s.cand_lo +
                            static_cast<int64_t>(rng.below(static_cast<uint64_t>(s.n_cands)));
                        const std::vector<int32_t> wtoks = tokenize_prompt(
                            memory_window_items(*ps.seq, m,
                                                cfg.encode == EncodeMode::window ? cfg.short_window
                                                                                 : 1),
                            vocab, model);
                        NodeId wx = g.embed(wtoks, nullptr, drop_rng);
                        wx = g.blocks(wx, 0, model.split_layer, drop_rng);
                        if (cfg.pool == PoolMode::last) {
                            prefix_node = g.tape().slice_rows(
                                wx, static_cast<int64_t>(wtoks.size()) - 1, 1);
                        } else {
                            Tensor w({1, static_cast<int64_t>(wtoks.size())});
                            const double invw = 1.0 / static_cast<double>(wtoks.size());
                            for (int64_t c = 0; c < w.size(); ++c) w.at(c) = invw;
                            prefix_node =
                                g.tape().matmul(g.tape().leaf(std::move(w), false), wx);
                        }
                    }
                    NodeId x = prefix_node
                                   ? g.embed_prefix_node(ps.prompt, *prefix_node, drop_rng)
                                   : g.embed(ps.prompt, nullptr, drop_rng);
                    x = g.blocks(x, 0, model.n_layers, drop_rng);
                    x = g.final_norm(x);
                    NodeId logits = g.logits_rows(
                        x, static_cast<int64_t>(ps.prompt.size()) - 1, 1);
                    NodeId nll = g.tape().cross_entropy_nll(logits, {ps.target});
                    chunk_loss[ci] += g.tape().val(nll).data()[0];
                    g.tape().backward(g.tape().scale(nll, inv));
                    g.accumulate_param_grads(acc);
                }
            });

            std::vector<Tensor> grads;
            for (const Tensor* t : params.all_params()) grads.push_back(Tensor::zeros(t->shape()));
            for (size_t ci = 0; ci < n_chunks; ++ci) {
                if (chunk_acc[ci].size() != n_params)
                    throw ShapeError("train_backbone: chunk accumulator layout mismatch");
                for (size_t k = 0; k < n_params; ++k)
                    kern::axpy(static_cast<size_t>(grads[k].size()), 1.0,
                               chunk_acc[ci][k].data(), grads[k].data());
                loss_sum += chunk_loss[ci];
            }
            adam_step(params.all_params(), grads, adam);
        }
        result.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
        result.epochs_run = epoch + 1;

        if (early_stop) {
            const double recall = val_recall1();
            if (cfg.on_epoch) cfg.on_epoch(epoch, result.epoch_loss.back(), recall);
            if (recall > best_recall) {
                best_recall = recall;
                best = params;
                result.best_epoch = epoch;
                bad_epochs = 0;
            } else if (++bad_epochs >= cfg.patience) {
                break;
            }
        } else if (cfg.on_epoch) {
            cfg.on_epoch(epoch, result.epoch_loss.back(),
                         std::numeric_limits<double>::quiet_NaN());
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

} // namespace mrgr
