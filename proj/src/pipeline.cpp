#include "mrgr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <utility>

#include "mrgr/annotate.hpp"
#include "mrgr/container_io.hpp"
#include "mrgr/errors.hpp"
#include "mrgr/hashing.hpp"
#include "mrgr/json.hpp"
#include "mrgr/manifest.hpp"
#include "mrgr/memory_bank.hpp"
#include "mrgr/retriever.hpp"
#include "mrgr/synthetic.hpp"
#include "mrgr/training.hpp"

namespace mrgr::pipeline {

namespace fs = std::filesystem;

std::vector<const Sample*> sample_ptrs(const std::vector<Sample>& v) {
    std::vector<const Sample*> out;
    out.reserve(v.size());
    for (const Sample& s : v) out.push_back(&s);
    return out;
}

namespace {

using Clock = std::chrono::steady_clock;

int64_t ms_since(Clock::time_point start) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
}

RunManifest new_manifest(const RunConfig& cfg, const std::string& stage) {
    RunManifest m;
    m.stage = stage;
    m.config_hash = config_hash(cfg);
    m.config_text = canonical_dump(cfg, true);
    m.seed = cfg.seed;
    return m;
}

void ensure_parent_dir(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

void require_file(const std::string& path, const std::string& produced_by) {
    if (!fs::exists(path))
        throw MissingDependencyError(path + " not found; run " + produced_by + " first");
}

// Checkpoint whose architecture no longer matches the config is stale: the
// user edited model.* after training.
BackboneParams load_backbone_checked(const RunConfig& cfg) {
    require_file(cfg.backbone_path(), "train-backbone");
    BackboneParams p = load_backbone(cfg.backbone_path());
    const ModelConfig expected = cfg.model_config(p.config.vocab_size);
    if (!(expected == p.config))
        throw StaleArtifactError("backbone checkpoint " + cfg.backbone_path() +
                                 " was trained with a different model configuration; rerun "
                                 "train-backbone");
    return p;
}

BankStore load_banks_checked(const RunConfig& cfg, const std::string& backbone_hash) {
    require_file(cfg.banks_path(), "build-memory");
    BankStore store = BankStore::load(cfg.banks_path(), backbone_hash);
    if (store.pool() != cfg.pool_mode() || store.encode() != cfg.encode_mode())
        throw StaleArtifactError("memory store " + cfg.banks_path() +
                                 " used a different memory encoding configuration; rerun "
                                 "build-memory");
    return store;
}

} // namespace

PreparedData load_prepared(const RunConfig& cfg) {
    require_file(cfg.split_path(), "prepare-data");
    require_file(cfg.vocab_path(), "prepare-data");

    PreparedData pd;
    pd.loaded = load_split(cfg.split_path());
    if (pd.loaded.config_hash != data_config_hash(cfg))
        throw StaleArtifactError("split " + cfg.split_path() +
                                 " was cut with a different data configuration; rerun "
                                 "prepare-data");
    if (!fs::exists(pd.loaded.events_path))
        throw MissingDependencyError("events file " + pd.loaded.events_path +
                                     " recorded in the split no longer exists; rerun prepare-data");
    if (file_hash_hex(pd.loaded.events_path) != pd.loaded.events_hash)
        throw StaleArtifactError("events file " + pd.loaded.events_path +
                                 " changed since the split was cut; rerun prepare-data");

    const std::vector<InteractionEvent> events = ingest(pd.loaded.events_path);
    FilteredData filtered = filter_and_sequence(events, pd.loaded.params.min_item_interactions,
                                                pd.loaded.params.min_seq_len);
    pd.sequences = std::move(filtered.sequences);
    pd.vocab = ItemVocabulary::load(cfg.vocab_path());
    if (pd.vocab.items() != filtered.vocab.items())
        throw StaleArtifactError("vocabulary " + cfg.vocab_path() +
                                 " does not match the events file; rerun prepare-data");
    return pd;
}

void stage_prepare_data(const RunConfig& cfg, bool synthetic, const std::string& input_path) {
    if (synthetic == !input_path.empty())
        throw UsageError("prepare-data needs exactly one input: --synthetic or --input <events>");
    const Clock::time_point t0 = Clock::now();
    fs::create_directories(cfg.out_dir);

    std::vector<InteractionEvent> events;
    std::string events_path;
    if (synthetic) {
        SyntheticConfig sc = cfg.synthetic_config();
        sc.validate(cfg.data_short_window);
        events = generate_synthetic(sc, cfg.data_short_window, cfg.resolved_workers());
        events_path = (fs::path(cfg.out_dir) / "events.jsonl").string();
        const std::string tmp = events_path + ".tmp";
        {
            std::ofstream out(tmp, std::ios::trunc);
            if (!out) throw IoError("cannot write " + tmp);
            for (const InteractionEvent& e : events) {
                Json j;
                j["user"] = e.user;
                j["item"] = e.item;
                j["ts"] = e.ts;
                out << j.dump() << '\n';
            }
            if (!out) throw IoError("write failed: " + tmp);
        }
        std::error_code ec;
        fs::rename(tmp, events_path, ec);
        if (ec) throw IoError("rename " + tmp + " -> " + events_path + ": " + ec.message());
    } else {
        events_path = input_path;
        events = ingest(events_path);
    }

    const DataParams dp = cfg.data_params();
    FilteredData filtered = filter_and_sequence(events, dp.min_item_interactions, dp.min_seq_len);
    DatasetSplit split = split_chronological(filtered.sequences, dp);
    const std::pair<const char*, const std::vector<Sample>*> lists[] = {
        {"train", &split.train}, {"val", &split.val}, {"test", &split.test}};
    for (const auto& [name, list] : lists) {
        if (list->empty())
            std::fprintf(stderr, "warning: %s split is empty for the configured boundaries\n",
                         name);
    }

    filtered.vocab.save(cfg.vocab_path());
    save_split(cfg.split_path(), split, dp, events_path, file_hash_hex(events_path),
               data_config_hash(cfg));

    RunManifest m = new_manifest(cfg, "prepare-data");
    if (synthetic)
        m.outputs["events"] = file_ref(events_path);
    else
        m.inputs["events"] = file_ref(events_path);
    m.outputs["split"] = file_ref(cfg.split_path());
    m.outputs["vocab"] = file_ref(cfg.vocab_path());
    m.counters["events_total"] = static_cast<int64_t>(events.size());
    m.counters["users_kept"] = static_cast<int64_t>(filtered.sequences.size());
    m.counters["items_kept"] = filtered.vocab.item_count();
    m.counters["train_samples"] = static_cast<int64_t>(split.train.size());
    m.counters["val_samples"] = static_cast<int64_t>(split.val.size());
    m.counters["test_samples"] = static_cast<int64_t>(split.test.size());
    m.wall_ms = ms_since(t0);
    save_manifest(cfg.manifest_path("prepare-data"), m);
}

void stage_train_backbone(const RunConfig& cfg) {
    const Clock::time_point t0 = Clock::now();
    PreparedData pd = load_prepared(cfg);
    const SequenceIndex idx(pd.sequences);

    BackboneTrainConfig tc = cfg.backbone_train_config();
    tc.on_epoch = [](int64_t epoch, double nll, double recall) {
        std::printf("train-backbone: epoch %3lld  nll %.4f  val recall@1 %.4f\n",
                    static_cast<long long>(epoch), nll, recall);
        std::fflush(stdout);
    };
    BackboneTrainResult result =
        train_backbone(sample_ptrs(pd.loaded.split.train), sample_ptrs(pd.loaded.split.val), idx,
                       pd.vocab, tc);
    save_backbone(result.params, cfg.backbone_path());

    RunManifest m = new_manifest(cfg, "train-backbone");
    m.inputs["events"] = FileRef{pd.loaded.events_path, pd.loaded.events_hash};
    m.inputs["split"] = file_ref(cfg.split_path());
    m.inputs["vocab"] = file_ref(cfg.vocab_path());
    m.outputs["backbone"] = file_ref(cfg.backbone_path());
    m.counters["epochs_run"] = result.epochs_run;
    m.counters["best_epoch"] = result.best_epoch;
    m.counters["best_val_recall1"] = result.best_val_recall1;
    if (!result.epoch_loss.empty()) m.counters["final_train_nll"] = result.epoch_loss.back();
    m.wall_ms = ms_since(t0);
    save_manifest(cfg.manifest_path("train-backbone"), m);
}

void stage_build_memory(const RunConfig& cfg) {
    const Clock::time_point t0 = Clock::now();
    PreparedData pd = load_prepared(cfg);
    const BackboneParams p = load_backbone_checked(cfg);
    if (p.config.vocab_size != pd.vocab.token_count())
        throw StaleArtifactError("backbone checkpoint vocabulary size does not match " +
                                 cfg.vocab_path() + "; rerun train-backbone");
    const SequenceIndex idx(pd.sequences);

    std::vector<const Sample*> all;
    for (const std::vector<Sample>* list :
         {&pd.loaded.split.train, &pd.loaded.split.val, &pd.loaded.split.test})
        for (const Sample& s : *list) all.push_back(&s);

    BankStore store = BankStore::build(all, idx, p, pd.vocab, pd.loaded.params, cfg.pool_mode(),
                                       cfg.encode_mode(), cfg.resolved_workers());
    store.save(cfg.banks_path(), file_hash_hex(cfg.backbone_path()));

    RunManifest m = new_manifest(cfg, "build-memory");
    m.inputs["events"] = FileRef{pd.loaded.events_path, pd.loaded.events_hash};
    m.inputs["split"] = file_ref(cfg.split_path());
    m.inputs["vocab"] = file_ref(cfg.vocab_path());
    m.inputs["backbone"] = file_ref(cfg.backbone_path());
    m.outputs["banks"] = file_ref(cfg.banks_path());
    m.counters["users"] = store.user_count();
    m.counters["vectors"] = store.vector_count();
    m.counters["d_model"] = store.d_model();
    m.wall_ms = ms_since(t0);
    save_manifest(cfg.manifest_path("build-memory"), m);
}

void stage_annotate(const RunConfig& cfg) {
    const Clock::time_point t0 = Clock::now();
    PreparedData pd = load_prepared(cfg);
    const BackboneParams p = load_backbone_checked(cfg);
    const std::string backbone_hash = file_hash_hex(cfg.backbone_path());
    const BankStore store = load_banks_checked(cfg, backbone_hash);

    ensure_parent_dir(cfg.annotations_path());
    AnnotationResult res =
        annotate_dataset(sample_ptrs(pd.loaded.split.train), store, p, pd.vocab,
                         cfg.annotate_tau_label, cfg.annotations_path(), backbone_hash,
                         cfg.resolved_workers());

    RunManifest m = new_manifest(cfg, "annotate");
    m.inputs["split"] = file_ref(cfg.split_path());
    m.inputs["backbone"] = file_ref(cfg.backbone_path());
    m.inputs["banks"] = file_ref(cfg.banks_path());
    m.outputs["annotations"] = file_ref(cfg.annotations_path());
    m.counters["samples_annotated"] = res.stats.samples_annotated;
    m.counters["samples_skipped"] = res.stats.samples_skipped;
    m.counters["upper_passes"] = res.stats.upper_passes;
    m.counters["cache_hits"] = res.stats.cache_hits;
    m.counters["cache_misses"] = res.stats.cache_misses;
    m.wall_ms = ms_since(t0);
    save_manifest(cfg.manifest_path("annotate"), m);
}

void stage_train_retriever(const RunConfig& cfg) {
    const Clock::time_point t0 = Clock::now();
    PreparedData pd = load_prepared(cfg);
    const BackboneParams p = load_backbone_checked(cfg);
    const std::string backbone_hash = file_hash_hex(cfg.backbone_path());
    const BankStore store = load_banks_checked(cfg, backbone_hash);
    const std::vector<AnnotatedSample> anns =
        load_annotations(cfg.annotations_path(), backbone_hash, cfg.annotate_tau_label);

    std::map<std::string, const Sample*> by_id;
    for (const Sample& s : pd.loaded.split.train) by_id[s.sample_id] = &s;

    std::vector<RetrieverTrainExample> examples;
    examples.reserve(anns.size());
    for (const AnnotatedSample& a : anns) {
        auto it = by_id.find(a.sample_id);
        if (it == by_id.end())
            throw StaleArtifactError("annotation for unknown sample " + a.sample_id +
                                     "; rerun annotate");
        const MemoryBank bank = store.bank_for(*it->second);
        if (bank.entries.size() != a.labels.size())
            throw StaleArtifactError("annotation for sample " + a.sample_id +
                                     " does not match the memory bank size; rerun annotate");
        examples.push_back(RetrieverTrainExample{it->second, a.labels});
    }

    RetrieverTrainResult result =
        train_retriever(examples, sample_ptrs(pd.loaded.split.val), store, p, pd.vocab,
                        cfg.retriever_train_config());
    save_retriever(result.params, cfg.retriever_path(), backbone_hash);

    RunManifest m = new_manifest(cfg, "train-retriever");
    m.inputs["split"] = file_ref(cfg.split_path());
    m.inputs["backbone"] = file_ref(cfg.backbone_path());
    m.inputs["banks"] = file_ref(cfg.banks_path());
    m.inputs["annotations"] = file_ref(cfg.annotations_path());
    m.outputs["retriever"] = file_ref(cfg.retriever_path());
    m.counters["train_examples"] = static_cast<int64_t>(examples.size());
    m.counters["epochs_run"] = result.epochs_run;
    m.counters["best_epoch"] = result.best_epoch;
    m.counters["best_val_recall1"] = result.best_val_recall1;
    if (!result.epoch_loss.empty()) m.counters["final_train_kl"] = result.epoch_loss.back();
    m.wall_ms = ms_since(t0);
    save_manifest(cfg.manifest_path("train-retriever"), m);
}

MetricsReport stage_evaluate(const RunConfig& cfg, const std::string& variant,
                             const std::string& split_name) {
    const Clock::time_point t0 = Clock::now();
    const BaselineKind kind = baseline_from_string(variant);
    PreparedData pd = load_prepared(cfg);
    const BackboneParams p = load_backbone_checked(cfg);
    const std::string backbone_hash = file_hash_hex(cfg.backbone_path());

    const std::vector<Sample>* list = nullptr;
    if (split_name == "train")
        list = &pd.loaded.split.train;
    else if (split_name == "val")
        list = &pd.loaded.split.val;
    else if (split_name == "test")
        list = &pd.loaded.split.test;
    else
        throw UsageError("unknown split '" + split_name + "' (expected train|val|test)");

    EvalModels models;
    models.backbone = &p;
    models.vocab = &pd.vocab;
    models.tau_label = cfg.annotate_tau_label;

    BankStore store;
    RetrieverParams retriever;
    if (kind != BaselineKind::no_memory) {
        store = load_banks_checked(cfg, backbone_hash);
        models.store = &store;
    }
    if (kind == BaselineKind::learned) {
        require_file(cfg.retriever_path(), "train-retriever");
        retriever = load_retriever(cfg.retriever_path(), backbone_hash);
        models.retriever = &retriever;
    }

    MetricsReport report =
        run_eval(sample_ptrs(*list), split_name, kind, models, static_cast<uint64_t>(cfg.seed),
                 cfg.k_list(), cfg.resolved_workers());
    report.meta["config_hash"] = config_hash(cfg);
    report.meta["data_config_hash"] = data_config_hash(cfg);
    report.meta["split_file_hash"] = file_hash_hex(cfg.split_path());
    report.meta["backbone_hash"] = backbone_hash;
    if (models.store) report.meta["banks_hash"] = file_hash_hex(cfg.banks_path());
    if (models.retriever) report.meta["retriever_hash"] = file_hash_hex(cfg.retriever_path());
    save_report(cfg.report_path(variant, split_name), report);

    const std::string stage = "evaluate-" + variant + "-" + split_name;
    RunManifest m = new_manifest(cfg, stage);
    m.inputs["split"] = file_ref(cfg.split_path());
    m.inputs["backbone"] = file_ref(cfg.backbone_path());
    if (models.store) m.inputs["banks"] = file_ref(cfg.banks_path());
    if (models.retriever) m.inputs["retriever"] = file_ref(cfg.retriever_path());
    m.outputs["report"] = file_ref(cfg.report_path(variant, split_name));
    m.counters["evaluated"] = report.evaluated;
    m.counters["skipped"] = report.skipped;
    m.counters["metrics"] = Json(report.metrics);
    m.wall_ms = ms_since(t0);
    save_manifest(cfg.manifest_path(stage), m);
    return report;
}

Comparison stage_compare(const RunConfig& cfg, std::vector<std::string> report_paths) {
    const Clock::time_point t0 = Clock::now();
    if (report_paths.empty()) {
        if (!fs::is_directory(cfg.out_dir))
            throw UsageError("not a directory: " + cfg.out_dir);
        for (const auto& entry : fs::directory_iterator(cfg.out_dir)) {
            const std::string name = entry.path().filename().string();
            if (entry.is_regular_file() && name.rfind("report_", 0) == 0 &&
                name.size() > 5 && name.substr(name.size() - 5) == ".json")
                report_paths.push_back(entry.path().string());
        }
        std::sort(report_paths.begin(), report_paths.end());
    }
    if (report_paths.size() < 2)
        throw UsageError("compare needs at least two reports, found " +
                         std::to_string(report_paths.size()));

    std::vector<MetricsReport> reports;
    reports.reserve(report_paths.size());
    for (const std::string& path : report_paths) {
        require_file(path, "evaluate");
        reports.push_back(load_report(path));
    }
    Comparison comp = compare(reports);
    write_compare_csv(cfg.compare_csv_path(), reports);

    RunManifest m = new_manifest(cfg, "compare");
    for (size_t i = 0; i < report_paths.size(); ++i)
        m.inputs["report_" + std::to_string(i)] = file_ref(report_paths[i]);
    m.outputs["csv"] = file_ref(cfg.compare_csv_path());
    Json variants = Json::array();
    for (const std::string& v : comp.variants) variants.push_back(v);
    m.counters["variants"] = variants;
    m.wall_ms = ms_since(t0);
    save_manifest(cfg.manifest_path("compare"), m);
    return comp;
}

void stage_verify(const RunConfig& cfg) {
    const std::vector<std::string> problems = verify_run_dir(cfg.out_dir);
    if (problems.empty()) return;
    std::string msg = "hash chain broken:";
    for (const std::string& p : problems) msg += "\n  " + p;
    throw StaleArtifactError(msg);
}

} // namespace mrgr::pipeline
