#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mrgr/backbone.hpp"
#include "mrgr/memory_bank.hpp"

namespace mrgr {

// Relevance labels for retriever training, produced by measuring how much
// each memory vector changes the probability of the observed target when
// injected as the prefix: delta_m = P(y | window, z_m) - P(y | window).

struct AnnotatedSample {
    std::string sample_id;
    std::string user;
    int64_t cut = 0;
    std::string target_item;
    double baseline_prob = 0.0;    // P(y | window), null prefix
    double tau_label = 1.0;
    std::vector<double> delta;     // aligned with bank entry order (m ascending)
    std::vector<double> labels;    // softmax(delta / tau_label)
};

struct AnnotateStats {
    int64_t samples_annotated = 0;
    int64_t samples_skipped = 0;
    int64_t upper_passes = 0; // target-probability evaluations through the upper layers
    int64_t cache_hits = 0;
    int64_t cache_misses = 0;
};

// delta from per-token teacher-forced probabilities: product(with) - product(base).
double delta_from_probs(const std::vector<double>& with_prefix_probs,
                        const std::vector<double>& baseline_probs);

// S' = softmax(delta / tau_label).
std::vector<double> labels_from_deltas(const std::vector<double>& deltas, double tau_label);

// One element's delta given the sample's prompt tokens and the precomputed
// baseline probability (computed once per sample, reused across elements).
double delta_for_element(const BackboneParams& p, const std::vector<int32_t>& prompt_tokens,
                         const Tensor& z_m, const std::vector<int32_t>& target_tokens,
                         double baseline_prob);

// Annotate one sample against its bank. nullopt when the sample cannot be
// annotated (empty bank / target missing from the vocabulary); *skip_reason
// says why. *upper_passes is incremented by the number of target-probability
// evaluations performed (bank size + 1 for single-token targets).
std::optional<AnnotatedSample> annotate_sample(const Sample& s, const MemoryBank& bank,
                                               const BackboneParams& p,
                                               const ItemVocabulary& vocab, double tau_label,
                                               std::string* skip_reason, int64_t* upper_passes);

struct AnnotationResult {
    std::vector<AnnotatedSample> samples; // input order, skipped ones omitted
    AnnotateStats stats;
};

// Annotate every sample, consulting/rewriting a JSON-lines cache. A record is
// reused only if its checkpoint hash, tau_label, and delta length match the
// current inputs; anything else is recomputed. cache_path may be empty to
// disable caching. The cache file is rewritten atomically afterwards.
AnnotationResult annotate_dataset(const std::vector<const Sample*>& samples,
                                  const BankStore& store, const BackboneParams& p,
                                  const ItemVocabulary& vocab, double tau_label,
                                  const std::string& cache_path,
                                  const std::string& checkpoint_hash, int workers);

// Read back an annotation file for downstream training. Every record must
// carry the expected checkpoint hash and tau_label; otherwise the file is
// stale and annotate must be rerun.
std::vector<AnnotatedSample> load_annotations(const std::string& path,
                                              const std::string& expected_checkpoint_hash,
                                              double expected_tau_label);

} // namespace mrgr
