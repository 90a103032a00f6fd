#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mrgr/backbone.hpp"
#include "mrgr/dataset.hpp"
#include "mrgr/json.hpp"
#include "mrgr/memory_bank.hpp"
#include "mrgr/retriever.hpp"

namespace mrgr {

// Retrieval strategies under evaluation. no_memory is the plain next-item
// forward; random/semantic are non-learned retrieval baselines; oracle picks
// the element with the best measured probability gain (it peeks at the
// target); learned is the trained retriever.
enum class BaselineKind { no_memory, random_pick, semantic, oracle, learned };

const char* to_string(BaselineKind k);
BaselineKind baseline_from_string(const std::string& s);

// --------------------------------------------------------------- ranking ----

// Rank of the target among item tokens only: 1 + #{strictly higher logit}
// + #{equal logit with smaller token}. Target must be an item token.
int64_t rank_from_logits(const Tensor& logits, int32_t target_token);

// Full ranking as an explicit permutation of the item tokens, descending
// logit, ties by ascending token (== ascending item id, since tokens are
// assigned in sorted item order).
std::vector<int32_t> ground_logits(const Tensor& logits, const ItemVocabulary& vocab);

// Multi-token grounding path: ascending L2 distance between a generated
// vector and per-item embeddings (row i = item token i + N_SPECIAL_TOKENS).
std::vector<int32_t> ground_l2(const Tensor& query_vec, const Tensor& item_embeddings,
                               const ItemVocabulary& vocab);

// Item-token rows of the token embedding, for the L2 path.
Tensor item_embedding_matrix(const BackboneParams& p, const ItemVocabulary& vocab);

// ---------------------------------------------------------------- metrics ----

double recall_at_k(int64_t rank, int64_t k);
double ndcg_at_k(int64_t rank, int64_t k); // 1/log2(rank+1) if rank <= k else 0

// Linear-interpolation percentile over (n-1) intervals; p in [0,1].
// percentile([1,2,3,4], 0.25) = 1.75.
double percentile(std::vector<double> vals, double p);

// ------------------------------------------------------------------ runs ----

struct AuditRow {
    std::string sample_id;
    int64_t target_rank = 0;
    int64_t no_memory_rank = 0;
    int64_t retrieved_m = -1;  // -1 = no retrieval
    int64_t retrieved_ts = 0;
    bool improved = false;     // variant hit rank 1 where no_memory did not
    int64_t first_ts = 0;      // earliest event inside the sample's length cap
    int64_t target_ts = 0;
};

struct MetricsReport {
    std::string variant;
    std::string split_name;
    uint64_t seed = 0;
    std::vector<int64_t> k_list;
    std::map<std::string, double> metrics; // "recall@1", "ndcg@5", ...
    std::vector<AuditRow> rows;            // one per evaluated sample
    int64_t evaluated = 0;
    int64_t skipped = 0; // target missing from vocabulary
    Json meta;           // provenance (hashes, config) added by the pipeline
};

struct EvalModels {
    const BackboneParams* backbone = nullptr;
    const BankStore* store = nullptr;
    const RetrieverParams* retriever = nullptr; // learned variant only
    const ItemVocabulary* vocab = nullptr;
    double tau_label = 1.0; // oracle label temperature
};

// Full-ranking evaluation of one variant over one sample list. The seed is
// consumed only by the random variant (per-sample streams derived from the
// sample id, so worker count cannot change results).
MetricsReport run_eval(const std::vector<const Sample*>& samples, const std::string& split_name,
                       BaselineKind variant, const EvalModels& models, uint64_t seed,
                       const std::vector<int64_t>& k_list, int workers);

void save_report(const std::string& path, const MetricsReport& r);
MetricsReport load_report(const std::string& path);

// ------------------------------------------------------------- comparison ----

struct Comparison {
    std::vector<std::string> variants;          // input order
    std::vector<int64_t> k_list;
    std::map<std::string, std::map<std::string, double>> table; // variant -> metric -> value
    // Per-variant 25th/50th/75th percentiles of the per-sample improvement
    // (reciprocal-rank delta vs the no-memory rank recorded per row).
    std::map<std::string, std::array<double, 3>> improvement_percentiles;
};

// Requires >= 2 reports over the same split (and same K list).
Comparison compare(const std::vector<MetricsReport>& reports);

std::string format_comparison(const Comparison& c);

// Audit export for plotting: one row per evaluated sample of every
// memory-using variant.
void write_compare_csv(const std::string& path, const std::vector<MetricsReport>& reports);

} // namespace mrgr
