#pragma once

// Pipeline stages behind the CLI subcommands. Each stage validates its
// upstream artifacts (existence -> MissingDependencyError, hash/config drift
// -> StaleArtifactError naming the stage to rerun), does its work, writes its
// artifacts atomically, and records a run manifest. The functions are plain
// library calls so tests can drive whole runs in-process.

#include <string>
#include <vector>

#include "mrgr/dataset.hpp"
#include "mrgr/eval.hpp"
#include "mrgr/run_config.hpp"

namespace mrgr::pipeline {

std::vector<const Sample*> sample_ptrs(const std::vector<Sample>& v);

// Split + vocabulary + the user sequences rebuilt from the recorded events
// file, cross-checked against the hashes embedded in the split artifact.
struct PreparedData {
    LoadedSplit loaded;
    std::vector<UserSequence> sequences;
    ItemVocabulary vocab;
};
PreparedData load_prepared(const RunConfig& cfg);

// Exactly one of `synthetic` / non-empty `input_path` must be chosen by the
// caller. Writes events.jsonl (synthetic only), split.json and vocab.json.
void stage_prepare_data(const RunConfig& cfg, bool synthetic, const std::string& input_path);

void stage_train_backbone(const RunConfig& cfg);
void stage_build_memory(const RunConfig& cfg);
void stage_annotate(const RunConfig& cfg);
void stage_train_retriever(const RunConfig& cfg);

// variant: no_memory|random|semantic|oracle|learned; split_name: train|val|test.
MetricsReport stage_evaluate(const RunConfig& cfg, const std::string& variant,
                             const std::string& split_name);

// Empty report_paths means "all report_*.json in out_dir". Needs >= 2.
Comparison stage_compare(const RunConfig& cfg, std::vector<std::string> report_paths);

// Throws StaleArtifactError listing every hash-chain break in out_dir.
void stage_verify(const RunConfig& cfg);

} // namespace mrgr::pipeline
