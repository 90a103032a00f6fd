#include "mrgr/memory_bank.hpp"

#include <algorithm>
#include <cstring>

#include "mrgr/container_io.hpp"
#include "mrgr/errors.hpp"
#include "mrgr/threading.hpp"

namespace mrgr {

const char* to_string(PoolMode m) { return m == PoolMode::last ? "last" : "mean"; }
const char* to_string(EncodeMode m) { return m == EncodeMode::window ? "window" : "single_item"; }

PoolMode pool_mode_from_string(const std::string& s) {
    if (s == "last") return PoolMode::last;
    if (s == "mean") return PoolMode::mean;
    throw UsageError("unknown pooling mode: " + s + " (expected last|mean)");
}

EncodeMode encode_mode_from_string(const std::string& s) {
    if (s == "window") return EncodeMode::window;
    if (s == "single_item") return EncodeMode::single_item;
    throw UsageError("unknown encode mode: " + s + " (expected window|single_item)");
}

Tensor pool_states(const HiddenSeq& states, PoolMode mode) {
    const Tensor& h = states.states;
    if (h.rows() < 1 || h.cols() < 1) throw ShapeError("pool_states: empty states");
    const int64_t d = h.cols();
    Tensor out = Tensor::zeros({d});
    if (mode == PoolMode::last) {
        std::memcpy(out.data(), h.row(h.rows() - 1), static_cast<size_t>(d) * sizeof(double));
    } else {
        // Mean over every position, prefix slot included.
        for (int64_t r = 0; r < h.rows(); ++r) {
            const double* src = h.row(r);
            for (int64_t c = 0; c < d; ++c) out.data()[c] += src[c];
        }
        const double inv = 1.0 / static_cast<double>(h.rows());
        for (int64_t c = 0; c < d; ++c) out.data()[c] *= inv;
    }
    return out;
}

Tensor encode_memory_vector(const UserSequence& seq, int64_t m, const BackboneParams& p,
                            const ItemVocabulary& vocab, int64_t short_window, PoolMode pool,
                            EncodeMode enc) {
    std::vector<std::string> items = enc == EncodeMode::window
                                         ? memory_window_items(seq, m, short_window)
                                         : memory_window_items(seq, m, 1);
    const std::vector<int32_t> tokens = tokenize_prompt(items, vocab, p.config);
    return pool_states(encode_lower(p, tokens, nullptr), pool);
}

MemoryBank build_bank(const UserSequence& seq, int64_t cut, const BackboneParams& p,
                      const ItemVocabulary& vocab, int64_t short_window, int64_t max_seq,
                      PoolMode pool, EncodeMode enc) {
    WindowResult wr = window(seq, cut, short_window, max_seq);
    MemoryBank bank;
    bank.user = seq.user;
    bank.cut = cut;
    for (int64_t m = wr.cand_lo; m < wr.cand_lo + wr.n_cands; ++m) {
        MemoryEntry e;
        e.m = m;
        e.ts = seq.events[static_cast<size_t>(m - 1)].ts;
        e.z = encode_memory_vector(seq, m, p, vocab, short_window, pool, enc);
        bank.entries.push_back(std::move(e));
    }
    return bank;
}

// -------------------------------------------------------------- BankStore ----

int64_t BankStore::vector_count() const {
    int64_t n = 0;
    for (const auto& [_, uv] : users_) n += uv.vectors.rows();
    return n;
}

BankStore BankStore::build(const std::vector<const Sample*>& samples, const SequenceIndex& seqs,
                           const BackboneParams& p, const ItemVocabulary& vocab,
                           const DataParams& dp, PoolMode pool, EncodeMode enc, int workers) {
    BankStore store;
    store.d_model_ = p.config.d_model;
    store.short_window_ = dp.short_window;
    store.pool_ = pool;
    store.enc_ = enc;

    // Union of candidate ranges per user across all requesting samples.
    struct Range {
        int64_t lo = 0, hi = -1; // inclusive; empty when hi < lo
        std::vector<int64_t> cuts;
    };
    std::map<std::string, Range> ranges;
    for (const Sample* s : samples) {
        if (s->n_cands <= 0) continue;
        Range& r = ranges[s->user];
        const int64_t lo = s->cand_lo, hi = s->cand_lo + s->n_cands - 1;
        if (r.hi < r.lo) {
            r.lo = lo, r.hi = hi;
        } else {
            r.lo = std::min(r.lo, lo);
            r.hi = std::max(r.hi, hi);
        }
        r.cuts.push_back(s->cut);
    }

    std::vector<std::pair<const std::string*, const Range*>> order;
    order.reserve(ranges.size());
    for (auto& [user, r] : ranges) order.emplace_back(&user, &r);

    std::vector<UserVectors> built(order.size());
    parallel_chunks(order.size(), 1, workers, [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) {
            const UserSequence& seq = seqs.by_user(*order[i].first);
            const Range& r = *order[i].second;
            UserVectors uv;
            uv.first_m = r.lo;
            uv.cuts = r.cuts;
            std::sort(uv.cuts.begin(), uv.cuts.end());
            uv.cuts.erase(std::unique(uv.cuts.begin(), uv.cuts.end()), uv.cuts.end());
            const int64_t count = r.hi - r.lo + 1;
            uv.vectors = Tensor::zeros({count, p.config.d_model});
            uv.ts.resize(static_cast<size_t>(count));
            for (int64_t m = r.lo; m <= r.hi; ++m) {
                Tensor z = encode_memory_vector(seq, m, p, vocab, dp.short_window, pool, enc);
                std::memcpy(uv.vectors.row(m - r.lo), z.data(),
                            static_cast<size_t>(p.config.d_model) * sizeof(double));
                uv.ts[static_cast<size_t>(m - r.lo)] = seq.events[static_cast<size_t>(m - 1)].ts;
            }
            built[i] = std::move(uv);
        }
    });
    for (size_t i = 0; i < order.size(); ++i) store.users_[*order[i].first] = std::move(built[i]);
    return store;
}

MemoryBank BankStore::bank_for(const Sample& s) const {
    MemoryBank bank;
    bank.user = s.user;
    bank.cut = s.cut;
    if (s.n_cands <= 0) return bank;
    auto it = users_.find(s.user);
    if (it == users_.end())
        throw StaleArtifactError("bank store has no vectors for user " + s.user +
                                 "; rerun build-memory for this split");
    const UserVectors& uv = it->second;
    const int64_t hi = s.cand_lo + s.n_cands - 1;
    if (s.cand_lo < uv.first_m || hi > uv.first_m + uv.vectors.rows() - 1)
        throw StaleArtifactError("bank store does not cover sample " + s.sample_id +
                                 "; rerun build-memory for this split");
    for (int64_t m = s.cand_lo; m <= hi; ++m) {
        MemoryEntry e;
        e.m = m;
        e.ts = uv.ts[static_cast<size_t>(m - uv.first_m)];
        e.z = Tensor::zeros({d_model_});
        std::memcpy(e.z.data(), uv.vectors.row(m - uv.first_m),
                    static_cast<size_t>(d_model_) * sizeof(double));
        bank.entries.push_back(std::move(e));
    }
    return bank;
}

void BankStore::save(const std::string& path, const std::string& backbone_hash) const {
    Json meta;
    meta["role"] = "bank_store";
    meta["d_model"] = d_model_;
    meta["short_window"] = short_window_;
    meta["pool"] = to_string(pool_);
    meta["encode"] = to_string(enc_);
    meta["backbone_hash"] = backbone_hash;
    Json banks = Json::array();
    std::vector<NamedTensor> tensors;
    for (const auto& [user, uv] : users_) {
        Json b;
        b["user"] = user;
        b["first_m"] = uv.first_m;
        b["count"] = uv.vectors.rows();
        b["ts"] = uv.ts;
        b["cuts"] = uv.cuts;
        banks.push_back(std::move(b));
        tensors.push_back(NamedTensor{"vectors/" + user, &uv.vectors});
    }
    meta["banks"] = std::move(banks);
    write_container(path, MAGIC_BANKS, meta, tensors);
}

BankStore BankStore::load(const std::string& path, const std::string& expected_backbone_hash) {
    LoadedContainer c = read_container(path, MAGIC_BANKS);
    try {
        if (c.meta.at("role").get<std::string>() != "bank_store")
            throw FormatError("not a bank store: " + path);
        const std::string have = c.meta.at("backbone_hash").get<std::string>();
        if (!expected_backbone_hash.empty() && have != expected_backbone_hash)
            throw StaleArtifactError("bank store " + path + " was built against checkpoint " +
                                     have + " but the current checkpoint hashes to " +
                                     expected_backbone_hash + "; rerun build-memory");
        BankStore store;
        store.d_model_ = c.meta.at("d_model").get<int64_t>();
        store.short_window_ = c.meta.at("short_window").get<int64_t>();
        store.pool_ = pool_mode_from_string(c.meta.at("pool").get<std::string>());
        store.enc_ = encode_mode_from_string(c.meta.at("encode").get<std::string>());
        for (const Json& b : c.meta.at("banks")) {
            UserVectors uv;
            const std::string user = b.at("user").get<std::string>();
            uv.first_m = b.at("first_m").get<int64_t>();
            uv.ts = b.at("ts").get<std::vector<int64_t>>();
            uv.cuts = b.at("cuts").get<std::vector<int64_t>>();
            uv.vectors = c.tensor("vectors/" + user);
            const int64_t count = b.at("count").get<int64_t>();
            if (uv.vectors.rows() != count ||
                uv.ts.size() != static_cast<size_t>(count) ||
                uv.vectors.cols() != store.d_model_)
                throw FormatError("bank store " + path + ": inconsistent entry for user " + user);
            store.users_[user] = std::move(uv);
        }
        return store;
    } catch (const Json::exception& e) {
        throw FormatError("bank store " + path + ": bad manifest (" + e.what() + ")");
    }
}

} // namespace mrgr
