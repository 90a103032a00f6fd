#include "mrgr/annotate.hpp"

#include <atomic>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "mrgr/errors.hpp"
#include "mrgr/json.hpp"
#include "mrgr/tape.hpp"
#include "mrgr/threading.hpp"

namespace mrgr {

double delta_from_probs(const std::vector<double>& with_prefix_probs,
                        const std::vector<double>& baseline_probs) {
    if (with_prefix_probs.size() != baseline_probs.size() || with_prefix_probs.empty())
        throw ShapeError("delta_from_probs: probability lists must be non-empty and equal length");
    double with_p = 1.0, base_p = 1.0;
    for (double v : with_prefix_probs) {
        if (!(v > 0.0 && v <= 1.0)) throw NumericError("delta_from_probs: probability out of (0,1]");
        with_p *= v;
    }
    for (double v : baseline_probs) {
        if (!(v > 0.0 && v <= 1.0)) throw NumericError("delta_from_probs: probability out of (0,1]");
        base_p *= v;
    }
    return with_p - base_p;
}

std::vector<double> labels_from_deltas(const std::vector<double>& deltas, double tau_label) {
    if (deltas.empty()) throw ShapeError("labels_from_deltas: empty delta vector");
    Tensor t = Tensor::zeros({1, static_cast<int64_t>(deltas.size())});
    std::memcpy(t.data(), deltas.data(), deltas.size() * sizeof(double));
    softmax_rows_inplace(t, tau_label);
    return std::vector<double>(t.data(), t.data() + t.size());
}

double delta_for_element(const BackboneParams& p, const std::vector<int32_t>& prompt_tokens,
                         const Tensor& z_m, const std::vector<int32_t>& target_tokens,
                         double baseline_prob) {
    const double with_p = sequence_prob(p, encode_lower(p, prompt_tokens, &z_m), target_tokens);
    return with_p - baseline_prob;
}

std::optional<AnnotatedSample> annotate_sample(const Sample& s, const MemoryBank& bank,
                                               const BackboneParams& p,
                                               const ItemVocabulary& vocab, double tau_label,
                                               std::string* skip_reason, int64_t* upper_passes) {
    auto skip = [&](const std::string& why) -> std::optional<AnnotatedSample> {
        if (skip_reason) *skip_reason = why;
        return std::nullopt;
    };
    if (bank.entries.empty()) return skip("empty memory bank");
    if (!vocab.contains(s.target_item)) return skip("target item not in vocabulary");

    const std::vector<int32_t> prompt = tokenize_prompt(s.window_items, vocab, p.config);
    const std::vector<int32_t> target = {vocab.token_of(s.target_item)};

    AnnotatedSample out;
    out.sample_id = s.sample_id;
    out.user = s.user;
    out.cut = s.cut;
    out.target_item = s.target_item;
    out.tau_label = tau_label;
    out.baseline_prob = sequence_prob(p, encode_lower(p, prompt, nullptr), target);
    int64_t passes = static_cast<int64_t>(target.size());
    out.delta.resize(bank.entries.size());
    for (size_t m = 0; m < bank.entries.size(); ++m) {
        out.delta[m] = delta_for_element(p, prompt, bank.entries[m].z, target, out.baseline_prob);
        passes += static_cast<int64_t>(target.size());
    }
    out.labels = labels_from_deltas(out.delta, tau_label);
    if (upper_passes) *upper_passes += passes;
    return out;
}

// ------------------------------------------------------------------ cache ----

namespace {

Json record_to_json(const AnnotatedSample& a, const std::string& checkpoint_hash) {
    Json j;
    j["sample_id"] = a.sample_id;
    j["user"] = a.user;
    j["cut"] = a.cut;
    j["target_item"] = a.target_item;
    j["checkpoint_hash"] = checkpoint_hash;
    j["tau_label"] = a.tau_label;
    j["baseline_prob"] = a.baseline_prob;
    j["delta"] = a.delta;
    j["labels"] = a.labels;
    return j;
}

AnnotatedSample record_from_json(const Json& j) {
    AnnotatedSample a;
    a.sample_id = j.at("sample_id").get<std::string>();
    a.user = j.at("user").get<std::string>();
    a.cut = j.at("cut").get<int64_t>();
    a.target_item = j.at("target_item").get<std::string>();
    a.tau_label = j.at("tau_label").get<double>();
    a.baseline_prob = j.at("baseline_prob").get<double>();
    a.delta = j.at("delta").get<std::vector<double>>();
    a.labels = j.at("labels").get<std::vector<double>>();
    return a;
}

struct CacheRecord {
    AnnotatedSample sample;
    std::string checkpoint_hash;
};

std::map<std::string, CacheRecord> load_cache(const std::string& path) {
    std::map<std::string, CacheRecord> cache;
    if (path.empty() || !std::filesystem::exists(path)) return cache;
    std::ifstream in(path);
    if (!in) throw IoError("cannot open annotation cache: " + path);
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            Json j = Json::parse(line);
            CacheRecord rec;
            rec.sample = record_from_json(j);
            rec.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
            cache[rec.sample.sample_id] = std::move(rec);
        } catch (const Json::exception& e) {
            throw FormatError("annotation cache " + path + " line " + std::to_string(lineno) +
                              ": " + e.what());
        }
    }
    return cache;
}

} // namespace

AnnotationResult annotate_dataset(const std::vector<const Sample*>& samples,
                                  const BankStore& store, const BackboneParams& p,
                                  const ItemVocabulary& vocab, double tau_label,
                                  const std::string& cache_path,
                                  const std::string& checkpoint_hash, int workers) {
    const std::map<std::string, CacheRecord> cache = load_cache(cache_path);

    AnnotationResult result;
    std::vector<std::optional<AnnotatedSample>> slots(samples.size());
    std::vector<char> from_cache(samples.size(), 0);
    std::atomic<int64_t> upper_passes{0};
    std::atomic<int64_t> skipped{0};

    parallel_chunks(samples.size(), 8, workers, [&](size_t lo, size_t hi) {
        int64_t local_passes = 0, local_skipped = 0;
        for (size_t i = lo; i < hi; ++i) {
            const Sample& s = *samples[i];
            MemoryBank bank = store.bank_for(s);
            auto it = cache.find(s.sample_id);
            if (it != cache.end() && it->second.checkpoint_hash == checkpoint_hash &&
                it->second.sample.tau_label == tau_label &&
                it->second.sample.delta.size() == bank.entries.size() &&
                !bank.entries.empty()) {
                slots[i] = it->second.sample;
                from_cache[i] = 1;
                continue;
            }
            std::string reason;
            slots[i] = annotate_sample(s, bank, p, vocab, tau_label, &reason, &local_passes);
            if (!slots[i]) ++local_skipped;
        }
        upper_passes += local_passes;
        skipped += local_skipped;
    });

    for (size_t i = 0; i < slots.size(); ++i) {
        if (!slots[i]) continue;
        result.stats.samples_annotated += 1;
        if (from_cache[i])
            result.stats.cache_hits += 1;
        else
            result.stats.cache_misses += 1;
        result.samples.push_back(std::move(*slots[i]));
    }
    result.stats.samples_skipped = skipped.load();
    result.stats.upper_passes = upper_passes.load();

    if (!cache_path.empty()) {
        const std::string tmp = cache_path + ".tmp";
        {
            std::ofstream out(tmp, std::ios::trunc);
            if (!out) throw IoError("cannot write annotation cache: " + tmp);
            for (const AnnotatedSample& a : result.samples)
                out << record_to_json(a, checkpoint_hash).dump() << '\n';
            if (!out) throw IoError("write failed: " + tmp);
        }
        std::error_code ec;
        std::filesystem::rename(tmp, cache_path, ec);
        if (ec) throw IoError("rename " + tmp + " -> " + cache_path + ": " + ec.message());
    }
    return result;
}

std::vector<AnnotatedSample> load_annotations(const std::string& path,
                                              const std::string& expected_checkpoint_hash,
                                              double expected_tau_label) {
    if (!std::filesystem::exists(path))
        throw MissingDependencyError("annotation file not found: " + path + "; run annotate first");
    const std::map<std::string, CacheRecord> cache = load_cache(path);
    std::vector<AnnotatedSample> out;
    out.reserve(cache.size());
    for (const auto& [id, rec] : cache) {
        if (rec.checkpoint_hash != expected_checkpoint_hash)
            throw StaleArtifactError("annotation record " + id + " in " + path +
                                     " was produced with a different backbone checkpoint; rerun annotate");
        if (rec.sample.tau_label != expected_tau_label)
            throw StaleArtifactError("annotation record " + id + " in " + path +
                                     " used tau_label=" + std::to_string(rec.sample.tau_label) +
                                     "; rerun annotate");
        out.push_back(rec.sample);
    }
    return out;
}

} // namespace mrgr
