// Evaluation harness: ranking arithmetic over item tokens, metric oracles,
// percentile interpolation, variant selection rules, report persistence,
// comparison tables, and the audit CSV.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mrgr/backbone.hpp"
#include "mrgr/errors.hpp"
#include "mrgr/eval.hpp"
#include "mrgr/kernels.hpp"
#include "mrgr/memory_bank.hpp"

using namespace mrgr;

namespace {

ItemVocabulary abcd_vocab() { return ItemVocabulary::build({"a", "b", "c", "d"}); }

struct Fixture {
    ItemVocabulary vocab;
    BackboneParams params;
    std::vector<UserSequence> seqs;
    std::vector<Sample> samples;
    SequenceIndex* idx = nullptr;
    BankStore store;

    Fixture() {
        std::vector<std::string> items;
        for (int i = 0; i < 12; ++i) items.push_back("i" + std::to_string(i));
        vocab = ItemVocabulary::build(items);
        ModelConfig cfg;
        cfg.d_model = 16;
        cfg.n_layers = 2;
        cfg.split_layer = 1;
        cfg.n_heads = 2;
        cfg.ff_dim = 24;
        cfg.max_seq_len = 12;
        cfg.vocab_size = vocab.token_count();
        params = BackboneParams::init(cfg, 123);

        seqs.resize(2);
        seqs[0].user = "u1";
        seqs[1].user = "u2";
        for (int64_t i = 0; i < 34; ++i)
            seqs[0].events.push_back(InteractionEvent{"u1", "i" + std::to_string(i % 12), 100 + i});
        for (int64_t i = 0; i < 28; ++i)
            seqs[1].events.push_back(
                InteractionEvent{"u2", "i" + std::to_string((5 * i) % 12), 400 + i});
        idx = new SequenceIndex(seqs);

        for (const auto& [user, cut] : std::vector<std::pair<std::string, int64_t>>{
                 {"u1", 25}, {"u1", 30}, {"u1", 33}, {"u2", 22}, {"u2", 27}})
            samples.push_back(make_sample(user, cut));

        DataParams dp;
        dp.short_window = 10;
        dp.max_seq = 100;
        std::vector<const Sample*> ptrs;
        for (const Sample& s : samples) ptrs.push_back(&s);
        store = BankStore::build(ptrs, *idx, params, vocab, dp, PoolMode::last, EncodeMode::window,
                                 1);
    }
    ~Fixture() { delete idx; }

    Sample make_sample(const std::string& user, int64_t cut) const {
        const UserSequence& us = user == "u1" ? seqs[0] : seqs[1];
        Sample s;
        s.sample_id = user + "@" + std::to_string(cut);
        s.user = user;
        s.cut = cut;
        s.target_item = us.events[static_cast<size_t>(cut)].item;
        s.target_ts = us.events[static_cast<size_t>(cut)].ts;
        for (int64_t i = cut - 10; i < cut; ++i)
            s.window_items.push_back(us.events[static_cast<size_t>(i)].item);
        s.cand_lo = 1;
        s.n_cands = cut - 10;
        s.first_considered_ts = us.events[0].ts;
        return s;
    }

    std::vector<const Sample*> sample_ptrs() const {
        std::vector<const Sample*> p;
        for (const Sample& s : samples) p.push_back(&s);
        return p;
    }
};

} // namespace

TEST_CASE("rank counts item tokens only, ties toward the smaller token") {
    const ItemVocabulary vocab = abcd_vocab();
    REQUIRE(vocab.token_count() == 6);
    // special slots get the largest logits to prove they are ignored
    const Tensor logits = Tensor::vec({99.0, 98.0, 1.0, 3.0, 2.0, 0.5}); // a b c d
    CHECK(rank_from_logits(logits, vocab.token_of("b")) == 1);
    CHECK(rank_from_logits(logits, vocab.token_of("c")) == 2);
    CHECK(rank_from_logits(logits, vocab.token_of("a")) == 3);
    CHECK(rank_from_logits(logits, vocab.token_of("d")) == 4);

    const Tensor tied = Tensor::vec({0.0, 0.0, 2.0, 3.0, 2.0, 0.5});
    CHECK(rank_from_logits(tied, vocab.token_of("a")) == 2); // tie: a beats c
    CHECK(rank_from_logits(tied, vocab.token_of("c")) == 3);

    CHECK_THROWS_AS(rank_from_logits(Tensor::mat({{1.0, 2.0}}), 2), ShapeError);
    CHECK_THROWS_AS(rank_from_logits(logits, TOK_PRED), ShapeError);
    CHECK_THROWS_AS(rank_from_logits(logits, 6), ShapeError);
}

TEST_CASE("grounding returns the full descending permutation, consistent with rank") {
    const ItemVocabulary vocab = abcd_vocab();
    const Tensor logits = Tensor::vec({99.0, 98.0, 2.0, 3.0, 2.0, 0.5});
    const std::vector<int32_t> perm = ground_logits(logits, vocab);
    REQUIRE(perm.size() == 4);
    CHECK(perm[0] == vocab.token_of("b"));
    CHECK(perm[1] == vocab.token_of("a")); // 2.0 tie, smaller token first
    CHECK(perm[2] == vocab.token_of("c"));
    CHECK(perm[3] == vocab.token_of("d"));
    for (const char* it : {"a", "b", "c", "d"}) {
        const int32_t tok = vocab.token_of(it);
        const auto pos = std::find(perm.begin(), perm.end(), tok) - perm.begin();
        CHECK(pos + 1 == rank_from_logits(logits, tok));
    }
}

TEST_CASE("L2 grounding: a query equal to an item's embedding ranks it first") {
    const ItemVocabulary vocab = abcd_vocab();
    // rows: a, b, c, d; c and d coincide to exercise the tie rule
    const Tensor emb = Tensor::mat({{1.0, 0.0}, {0.0, 1.0}, {0.5, 0.5}, {0.5, 0.5}});
    const std::vector<int32_t> perm = ground_l2(Tensor::vec({0.0, 1.0}), emb, vocab);
    REQUIRE(perm.size() == 4);
    CHECK(perm[0] == vocab.token_of("b")); // distance 0
    CHECK(perm[1] == vocab.token_of("c")); // ties with d, smaller token first
    CHECK(perm[2] == vocab.token_of("d"));
    CHECK(perm[3] == vocab.token_of("a"));
}

TEST_CASE("the item embedding matrix is the token table minus the special rows") {
    Fixture f;
    const Tensor emb = item_embedding_matrix(f.params, f.vocab);
    REQUIRE(emb.rows() == f.vocab.item_count());
    REQUIRE(emb.cols() == f.params.config.d_model);
    for (int64_t i = 0; i < emb.rows(); ++i)
        for (int64_t c = 0; c < emb.cols(); ++c)
            CHECK(emb.at(i, c) == f.params.tok_emb.at(i + N_SPECIAL_TOKENS, c));
}

TEST_CASE("metric oracles") {
    CHECK(recall_at_k(1, 1) == 1.0);
    CHECK(recall_at_k(2, 1) == 0.0);
    CHECK(recall_at_k(3, 5) == 1.0);
    CHECK(recall_at_k(5, 5) == 1.0);
    CHECK(recall_at_k(6, 5) == 0.0);

    CHECK(ndcg_at_k(1, 5) == 1.0);
    CHECK(ndcg_at_k(3, 5) == doctest::Approx(0.5).epsilon(1e-15)); // 1/log2(4)
    CHECK(ndcg_at_k(5, 5) == doctest::Approx(1.0 / std::log2(6.0)).epsilon(1e-15));
    CHECK(ndcg_at_k(6, 5) == 0.0);

    CHECK_THROWS_AS(recall_at_k(1, 0), UsageError);
    CHECK_THROWS_AS(recall_at_k(0, 1), ShapeError);
    CHECK_THROWS_AS(ndcg_at_k(1, 0), UsageError);
    CHECK_THROWS_AS(ndcg_at_k(-1, 5), ShapeError);
}

TEST_CASE("metrics respect monotonicity in K and the NDCG <= Recall bound") {
    for (int64_t rank = 1; rank <= 12; ++rank) {
        double prev_recall = 0.0, prev_ndcg = 0.0;
        for (int64_t k = 1; k <= 12; ++k) {
            const double r = recall_at_k(rank, k), n = ndcg_at_k(rank, k);
            CHECK(r >= prev_recall);
            CHECK(n >= prev_ndcg);
            CHECK(n <= r + 1e-15);
            prev_recall = r;
            prev_ndcg = n;
        }
    }
}

TEST_CASE("percentiles interpolate linearly") {
    CHECK(percentile({1, 2, 3, 4}, 0.25) == doctest::Approx(1.75).epsilon(1e-15));
    CHECK(percentile({1, 2, 3, 4}, 0.50) == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(percentile({1, 2, 3, 4}, 0.75) == doctest::Approx(3.25).epsilon(1e-15));
    CHECK(percentile({4, 1, 3, 2}, 0.25) == doctest::Approx(1.75).epsilon(1e-15)); // sorts first
    CHECK(percentile({1, 2, 3, 4}, 0.0) == 1.0);
    CHECK(percentile({1, 2, 3, 4}, 1.0) == 4.0);
    CHECK(percentile({7}, 0.5) == 7.0);
    CHECK_THROWS_AS(percentile({}, 0.5), ShapeError);
    CHECK_THROWS_AS(percentile({1, 2}, 1.5), UsageError);
}

TEST_CASE("no_memory evaluation needs no store and matches a manual recompute") {
    Fixture f;
    Sample unknown = f.make_sample("u1", 20);
    unknown.target_item = "outsider";
    std::vector<const Sample*> ptrs = f.sample_ptrs();
    ptrs.push_back(&unknown);

    EvalModels models;
    models.backbone = &f.params;
    models.vocab = &f.vocab;
    const MetricsReport r = run_eval(ptrs, "test", BaselineKind::no_memory, models, 1, {1, 5}, 1);
    CHECK(r.variant == std::string("no_memory"));
    CHECK(r.evaluated == 5);
    CHECK(r.skipped == 1);
    REQUIRE(r.rows.size() == 5);

    double recall5 = 0.0, ndcg1 = 0.0;
    for (size_t i = 0; i < r.rows.size(); ++i) {
        const AuditRow& row = r.rows[i];
        CHECK(row.retrieved_m == -1);
        CHECK(!row.improved);
        CHECK(row.target_rank == row.no_memory_rank);
        // recompute the rank straight from the forward pass
        const Sample& s = f.samples[i];
        const Tensor logits =
            full_forward_logits(f.params, tokenize_prompt(s.window_items, f.vocab, f.params.config),
                                nullptr);
        CHECK(row.target_rank == rank_from_logits(logits, f.vocab.token_of(s.target_item)));
        recall5 += recall_at_k(row.target_rank, 5);
        ndcg1 += ndcg_at_k(row.target_rank, 1);
    }
    CHECK(r.metrics.at("recall@5") == doctest::Approx(recall5 / 5.0).epsilon(1e-12));
    CHECK(r.metrics.at("ndcg@1") == doctest::Approx(ndcg1 / 5.0).epsilon(1e-12));
    REQUIRE(r.metrics.count("recall@1") == 1);
    REQUIRE(r.metrics.count("ndcg@5") == 1);

    // memory variants refuse to run without their inputs
    CHECK_THROWS_AS(run_eval(ptrs, "test", BaselineKind::random_pick, models, 1, {1}, 1),
                    UsageError);
    models.store = &f.store;
    CHECK_THROWS_AS(run_eval(ptrs, "test", BaselineKind::learned, models, 1, {1}, 1), UsageError);
    CHECK_THROWS_AS(run_eval(ptrs, "test", BaselineKind::no_memory, models, 1, {0}, 1), UsageError);
}

TEST_CASE("the random variant is seeded per sample id and worker-independent") {
    Fixture f;
    EvalModels models;
    models.backbone = &f.params;
    models.vocab = &f.vocab;
    models.store = &f.store;
    const auto ptrs = f.sample_ptrs();

    const MetricsReport a = run_eval(ptrs, "test", BaselineKind::random_pick, models, 7, {1, 5}, 1);
    const MetricsReport b = run_eval(ptrs, "test", BaselineKind::random_pick, models, 7, {1, 5}, 1);
    const MetricsReport c = run_eval(ptrs, "test", BaselineKind::random_pick, models, 7, {1, 5}, 4);
    REQUIRE(a.rows.size() == b.rows.size());
    for (size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].retrieved_m == b.rows[i].retrieved_m);
        CHECK(a.rows[i].retrieved_m == c.rows[i].retrieved_m);
        CHECK(a.rows[i].retrieved_m >= 1); // every bank here is non-empty
    }
    const MetricsReport d = run_eval(ptrs, "test", BaselineKind::random_pick, models, 8, {1, 5}, 1);
    bool any_pick_changed = false;
    for (size_t i = 0; i < a.rows.size(); ++i)
        any_pick_changed = any_pick_changed || a.rows[i].retrieved_m != d.rows[i].retrieved_m;
    CHECK(any_pick_changed);
}

TEST_CASE("semantic picks the cosine argmax; oracle picks the delta argmax") {
    Fixture f;
    EvalModels models;
    models.backbone = &f.params;
    models.vocab = &f.vocab;
    models.store = &f.store;
    const auto ptrs = f.sample_ptrs();

    const MetricsReport sem = run_eval(ptrs, "test", BaselineKind::semantic, models, 1, {1}, 1);
    const MetricsReport ora = run_eval(ptrs, "test", BaselineKind::oracle, models, 1, {1}, 1);
    REQUIRE(sem.rows.size() == f.samples.size());
    REQUIRE(ora.rows.size() == f.samples.size());

    for (size_t i = 0; i < f.samples.size(); ++i) {
        const Sample& s = f.samples[i];
        const MemoryBank bank = f.store.bank_for(s);
        REQUIRE(!bank.entries.empty());
        const std::vector<int32_t> prompt = tokenize_prompt(s.window_items, f.vocab, f.params.config);
        const HiddenSeq base = encode_lower(f.params, prompt, nullptr);
        const Tensor z_t = pool_states(base, PoolMode::last);

        // semantic: argmax of cosine similarity (ties toward the earliest)
        double best_cos = -1e300;
        int64_t best_m = -1;
        for (const MemoryEntry& e : bank.entries) {
            const double num = kern::dot(static_cast<size_t>(z_t.size()), z_t.data(), e.z.data());
            const double den = std::sqrt(kern::dot(static_cast<size_t>(z_t.size()), z_t.data(),
                                                   z_t.data())) *
                               std::sqrt(kern::dot(static_cast<size_t>(e.z.size()), e.z.data(),
                                                   e.z.data()));
            const double cs = num / den;
            if (cs > best_cos) {
                best_cos = cs;
                best_m = e.m;
            }
        }
        CHECK(sem.rows[i].retrieved_m == best_m);

        // oracle: argmax of the measured probability delta
        const std::vector<int32_t> target = {f.vocab.token_of(s.target_item)};
        const double p_base = sequence_prob(f.params, base, target);
        double best_delta = -1e300;
        int64_t best_om = -1;
        for (const MemoryEntry& e : bank.entries) {
            const double d =
                sequence_prob(f.params, encode_lower(f.params, prompt, &e.z), target) - p_base;
            if (d > best_delta) {
                best_delta = d;
                best_om = e.m;
            }
        }
        CHECK(ora.rows[i].retrieved_m == best_om);

        // and the reported rank is the rank under the injected prefix
        const MemoryEntry* chosen = nullptr;
        for (const MemoryEntry& e : bank.entries)
            if (e.m == best_om) chosen = &e;
        REQUIRE(chosen != nullptr);
        const Tensor injected = full_forward_logits(f.params, prompt, &chosen->z);
        CHECK(ora.rows[i].target_rank == rank_from_logits(injected, target[0]));
    }
}

TEST_CASE("reports round-trip through disk") {
    Fixture f;
    EvalModels models;
    models.backbone = &f.params;
    models.vocab = &f.vocab;
    models.store = &f.store;
    MetricsReport r =
        run_eval(f.sample_ptrs(), "val", BaselineKind::semantic, models, 3, {1, 5}, 1);
    r.meta["config_hash"] = "cfg123";
    const std::string path = "/tmp/mrgr_test_report.json";
    save_report(path, r);
    const MetricsReport back = load_report(path);
    CHECK(back.variant == r.variant);
    CHECK(back.split_name == "val");
    CHECK(back.seed == 3);
    CHECK(back.k_list == r.k_list);
    CHECK(back.evaluated == r.evaluated);
    CHECK(back.skipped == r.skipped);
    CHECK(back.metrics == r.metrics);
    CHECK(back.meta.at("config_hash").get<std::string>() == "cfg123");
    REQUIRE(back.rows.size() == r.rows.size());
    for (size_t i = 0; i < r.rows.size(); ++i) {
        CHECK(back.rows[i].sample_id == r.rows[i].sample_id);
        CHECK(back.rows[i].target_rank == r.rows[i].target_rank);
        CHECK(back.rows[i].no_memory_rank == r.rows[i].no_memory_rank);
        CHECK(back.rows[i].retrieved_m == r.rows[i].retrieved_m);
        CHECK(back.rows[i].improved == r.rows[i].improved);
    }
    std::filesystem::remove(path);

    const std::string bogus = "/tmp/mrgr_test_notareport.json";
    std::ofstream(bogus) << "{\"format\":\"something_else\"}\n";
    CHECK_THROWS_AS(load_report(bogus), FormatError);
    std::filesystem::remove(bogus);
}

namespace {

MetricsReport fake_report(const std::string& variant, const std::string& split,
                          const std::vector<std::pair<int64_t, int64_t>>& rank_pairs,
                          uint64_t seed = 1) {
    MetricsReport r;
    r.variant = variant;
    r.split_name = split;
    r.seed = seed;
    r.k_list = {1, 5};
    int64_t i = 0;
    double rec1 = 0;
    for (const auto& [rank, base] : rank_pairs) {
        AuditRow row;
        row.sample_id = "u@" + std::to_string(++i);
        row.target_rank = rank;
        row.no_memory_rank = base;
        row.retrieved_m = variant == "no_memory" ? -1 : 2;
        row.retrieved_ts = 1000;
        row.improved = rank == 1 && base != 1;
        row.first_ts = 10;
        row.target_ts = 20;
        r.rows.push_back(row);
        rec1 += rank == 1 ? 1.0 : 0.0;
    }
    r.evaluated = static_cast<int64_t>(rank_pairs.size());
    r.metrics["recall@1"] = rec1 / static_cast<double>(rank_pairs.size());
    return r;
}

} // namespace

TEST_CASE("comparison tables carry reciprocal-rank improvement percentiles") {
    // improvements: 1/rank - 1/no_memory_rank
    const MetricsReport base = fake_report("no_memory", "test", {{2, 2}, {4, 4}, {10, 10}, {1, 1}});
    const MetricsReport ora = fake_report("oracle", "test", {{1, 2}, {2, 4}, {5, 10}, {1, 1}});
    const Comparison c = compare({base, ora});
    REQUIRE(c.variants.size() == 2);
    CHECK(c.variants[0] == "no_memory");
    CHECK(c.variants[1] == "oracle");
    CHECK(c.table.at("oracle").at("recall@1") == doctest::Approx(0.5).epsilon(1e-12));

    // oracle improvements: 1-1/2=.5, 1/2-1/4=.25, 1/5-1/10=.1, 0 -> sorted {0,.1,.25,.5}
    const auto& ip = c.improvement_percentiles.at("oracle");
    CHECK(ip[0] == doctest::Approx(percentile({0.0, 0.1, 0.25, 0.5}, 0.25)).epsilon(1e-12));
    CHECK(ip[1] == doctest::Approx(0.175).epsilon(1e-12)); // median of the four
    CHECK(ip[2] == doctest::Approx(percentile({0.0, 0.1, 0.25, 0.5}, 0.75)).epsilon(1e-12));
    // the no-memory report improves on itself by exactly zero everywhere
    const auto& bp = c.improvement_percentiles.at("no_memory");
    CHECK(bp[0] == 0.0);
    CHECK(bp[1] == 0.0);
    CHECK(bp[2] == 0.0);

    const std::string table = format_comparison(c);
    CHECK(table.find("no_memory") != std::string::npos);
    CHECK(table.find("oracle") != std::string::npos);
    CHECK(table.find("recall@1") != std::string::npos);
    CHECK(table.find("imp_p50") != std::string::npos);

    // validation: same split, same K list, at least two
    CHECK_THROWS_AS(compare({base}), UsageError);
    MetricsReport other_split = ora;
    other_split.split_name = "val";
    CHECK_THROWS_AS(compare({base, other_split}), UsageError);
    MetricsReport other_k = ora;
    other_k.k_list = {1};
    CHECK_THROWS_AS(compare({base, other_k}), UsageError);

    // two seeds of one variant stay distinguishable
    const MetricsReport ora2 = fake_report("oracle", "test", {{1, 2}, {1, 4}, {5, 10}, {1, 1}}, 9);
    const Comparison c2 = compare({base, ora, ora2});
    CHECK(c2.variants[2] == "oracle#9");
    CHECK(c2.table.count("oracle#9") == 1);
}

TEST_CASE("the audit CSV has a fixed header and omits the no-memory variant") {
    const MetricsReport base = fake_report("no_memory", "test", {{2, 2}, {1, 1}});
    const MetricsReport ora = fake_report("oracle", "test", {{1, 2}, {1, 1}}, 4);
    const std::string path = "/tmp/mrgr_test_compare.csv";
    write_compare_csv(path, {base, ora});

    std::ifstream in(path);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "sample_id,variant,seed,retrieved_index,retrieved_ts,improved,first_ts,target_ts");
    std::vector<std::string> rows;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(line);
    REQUIRE(rows.size() == 2); // only the oracle rows
    CHECK(rows[0] == "u@1,oracle,4,2,1000,1,10,20");
    CHECK(rows[1] == "u@2,oracle,4,2,1000,0,10,20");
    std::filesystem::remove(path);
}
