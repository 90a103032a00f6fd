#include "mrgr/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "mrgr/errors.hpp"
#include "mrgr/hashing.hpp"
#include "mrgr/json.hpp"

namespace mrgr {

namespace {

enum class Kind { i64, f64, str };

// One row per config key, in file order. `local` keys describe the run
// environment and are excluded from the experiment fingerprint. `section`
// is non-null on the first key of a section and becomes a comment header
// in the annotated dump.
struct Binding {
    const char* key;
    Kind kind;
    int64_t RunConfig::*i;
    double RunConfig::*d;
    std::string RunConfig::*s;
    bool local;
    const char* section;
    const char* comment;
};

constexpr int64_t RunConfig::*NI = nullptr;
constexpr double RunConfig::*ND = nullptr;
constexpr std::string RunConfig::*NS = nullptr;

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> b = {
        {"out_dir", Kind::str, NI, ND, &RunConfig::out_dir, true,
         "run environment (never part of the experiment fingerprint)",
         "artifact directory for this run"},
        {"cache_dir", Kind::str, NI, ND, &RunConfig::cache_dir, true, nullptr,
         "annotation cache directory (empty = out_dir; MRGR_CACHE_DIR overrides)"},
        {"workers", Kind::i64, &RunConfig::workers, ND, NS, true, nullptr,
         "worker threads (0 = number of cores); results are identical for any value"},
        {"kernels", Kind::str, NI, ND, &RunConfig::kernels, true, nullptr,
         "compute kernels: auto|scalar|avx2|avx512|neon (all bitwise-equivalent)"},

        {"seed", Kind::i64, &RunConfig::seed, ND, NS, false,
         "experiment identity", "master seed; every stage derives from it"},

        // Path only — the events *content* hash recorded in split.json is
        // what chains downstream artifacts, so the path stays local.
        {"data.input", Kind::str, NI, ND, &RunConfig::data_input, true,
         "data shaping", "events JSONL path (or pass prepare-data --input; empty for synthetic)"},
        {"data.short_window", Kind::i64, &RunConfig::data_short_window, ND, NS, false, nullptr,
         "recent-history window length |h|"},
        {"data.max_seq", Kind::i64, &RunConfig::data_max_seq, ND, NS, false, nullptr,
         "per-sample history cap; older interactions are ignored"},
        {"data.min_item_interactions", Kind::i64, &RunConfig::data_min_item_interactions, ND, NS,
         false, nullptr, "drop items seen fewer times than this"},
        {"data.min_seq_len", Kind::i64, &RunConfig::data_min_seq_len, ND, NS, false, nullptr,
         "drop users with shorter filtered histories"},
        {"data.t_train_end", Kind::i64, &RunConfig::data_t_train_end, ND, NS, false, nullptr,
         "train/val boundary timestamp (seconds)"},
        {"data.t_val_end", Kind::i64, &RunConfig::data_t_val_end, ND, NS, false, nullptr,
         "val/test boundary timestamp (seconds)"},
        {"data.t_test_end", Kind::i64, &RunConfig::data_t_test_end, ND, NS, false, nullptr,
         "end of the test interval (seconds)"},
        {"data.samples_per_user", Kind::i64, &RunConfig::data_samples_per_user, ND, NS, false,
         nullptr, "keep only the latest N cut points per user per split (0 = all)"},

        {"synthetic.n_users", Kind::i64, &RunConfig::synthetic_n_users, ND, NS, false,
         "synthetic generator", nullptr},
        {"synthetic.n_item_pairs", Kind::i64, &RunConfig::synthetic_n_item_pairs, ND, NS, false,
         nullptr, "planted anchor/partner pairs"},
        {"synthetic.n_fillers", Kind::i64, &RunConfig::synthetic_n_fillers, ND, NS, false,
         nullptr, "filler catalogue size"},
        {"synthetic.seq_len", Kind::i64, &RunConfig::synthetic_seq_len, ND, NS, false, nullptr,
         "interactions per user"},
        {"synthetic.anchor_lo", Kind::i64, &RunConfig::synthetic_anchor_lo, ND, NS, false,
         nullptr, "anchor position range (1-based, inclusive)"},
        {"synthetic.anchor_hi", Kind::i64, &RunConfig::synthetic_anchor_hi, ND, NS, false,
         nullptr, nullptr},
        {"synthetic.p_long", Kind::f64, NI, &RunConfig::synthetic_p_long, NS, false, nullptr,
         "probability the final event is the planted partner"},

        {"model.d_model", Kind::i64, &RunConfig::model_d_model, ND, NS, false,
         "backbone architecture", nullptr},
        {"model.n_layers", Kind::i64, &RunConfig::model_n_layers, ND, NS, false, nullptr, nullptr},
        {"model.split_layer", Kind::i64, &RunConfig::model_split_layer, ND, NS, false, nullptr,
         "memory states are pooled after this layer"},
        {"model.n_heads", Kind::i64, &RunConfig::model_n_heads, ND, NS, false, nullptr, nullptr},
        {"model.ff_dim", Kind::i64, &RunConfig::model_ff_dim, ND, NS, false, nullptr, nullptr},
        {"model.max_seq_len", Kind::i64, &RunConfig::model_max_seq_len, ND, NS, false, nullptr,
         "token slots including the prefix slot"},
        {"model.dropout", Kind::f64, NI, &RunConfig::model_dropout, NS, false, nullptr, nullptr},

        {"train.backbone_lr", Kind::f64, NI, &RunConfig::train_backbone_lr, NS, false,
         "training", "grid: 1e-2, 3e-3, 1e-3, 3e-4"},
        {"train.backbone_batch", Kind::i64, &RunConfig::train_backbone_batch, ND, NS, false,
         nullptr, nullptr},
        {"train.backbone_epochs", Kind::i64, &RunConfig::train_backbone_epochs, ND, NS, false,
         nullptr, "upper bound; early stopping usually ends sooner"},
        {"train.p_prefix", Kind::f64, NI, &RunConfig::train_p_prefix, NS, false, nullptr,
         "probability a training sample sees a random true memory prefix"},
        {"train.retriever_lr", Kind::f64, NI, &RunConfig::train_retriever_lr, NS, false, nullptr,
         "grid: 1e-2, 3e-3, 1e-3, 3e-4"},
        {"train.retriever_batch", Kind::i64, &RunConfig::train_retriever_batch, ND, NS, false,
         nullptr, nullptr},
        {"train.retriever_epochs", Kind::i64, &RunConfig::train_retriever_epochs, ND, NS, false,
         nullptr, nullptr},
        {"train.retriever_hidden", Kind::i64, &RunConfig::train_retriever_hidden, ND, NS, false,
         nullptr, "retriever MLP hidden width"},
        {"train.patience", Kind::i64, &RunConfig::train_patience, ND, NS, false, nullptr,
         "early-stop patience, epochs without val Recall@1 improvement"},

        {"annotate.tau_label", Kind::f64, NI, &RunConfig::annotate_tau_label, NS, false,
         "annotation", "label softmax temperature; grid: 10, 1, 0.1, 0.01"},

        {"memory.pool", Kind::str, NI, ND, &RunConfig::memory_pool, false, "memory encoding",
         "last|mean"},
        {"memory.encode", Kind::str, NI, ND, &RunConfig::memory_encode, false, nullptr,
         "window|single_item"},

        {"eval.k_list", Kind::str, NI, ND, &RunConfig::eval_k_list, false, "evaluation",
         "comma-separated cutoffs for recall@k / ndcg@k"},
    };
    return b;
}

const Binding* find_binding(const std::string& key) {
    for (const Binding& b : bindings())
        if (key == b.key) return &b;
    return nullptr;
}

std::string trim(const std::string& s) {
    size_t lo = s.find_first_not_of(" \t\r\n");
    if (lo == std::string::npos) return "";
    size_t hi = s.find_last_not_of(" \t\r\n");
    return s.substr(lo, hi - lo + 1);
}

std::string format_f64(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // Trim to the shortest representation that round-trips exactly.
    for (int prec = 1; prec < 17; ++prec) {
        char t[64];
        std::snprintf(t, sizeof(t), "%.*g", prec, v);
        if (std::strtod(t, nullptr) == v) return t;
    }
    return buf;
}

std::string value_str(const RunConfig& cfg, const Binding& b) {
    switch (b.kind) {
        case Kind::i64: return std::to_string(cfg.*(b.i));
        case Kind::f64: return format_f64(cfg.*(b.d));
        case Kind::str: return cfg.*(b.s);
    }
    return "";
}

void set_value(RunConfig& cfg, const Binding& b, const std::string& raw, const std::string& where) {
    const std::string v = trim(raw);
    errno = 0;
    char* end = nullptr;
    switch (b.kind) {
        case Kind::i64: {
            long long n = std::strtoll(v.c_str(), &end, 10);
            if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
                throw UsageError(where + ": key " + b.key + " expects an integer, got '" + v + "'");
            cfg.*(b.i) = static_cast<int64_t>(n);
            break;
        }
        case Kind::f64: {
            double d = std::strtod(v.c_str(), &end);
            if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
                throw UsageError(where + ": key " + b.key + " expects a number, got '" + v + "'");
            cfg.*(b.d) = d;
            break;
        }
        case Kind::str: cfg.*(b.s) = v; break;
    }
}

void flatten_json(const Json& j, const std::string& prefix, RunConfig& cfg,
                  const std::string& where) {
    if (!j.is_object())
        throw UsageError(where + ": expected a JSON object" +
                         (prefix.empty() ? "" : " at key " + prefix));
    for (const auto& [k, v] : j.items()) {
        const std::string key = prefix.empty() ? k : prefix + "." + k;
        if (v.is_object()) {
            flatten_json(v, key, cfg, where);
            continue;
        }
        const Binding* b = find_binding(key);
        if (!b) throw UsageError(where + ": unknown config key: " + key);
        if (v.is_string())
            set_value(cfg, *b, v.get<std::string>(), where);
        else if (v.is_number_integer())
            set_value(cfg, *b, std::to_string(v.get<int64_t>()), where);
        else if (v.is_number_float())
            set_value(cfg, *b, format_f64(v.get<double>()), where);
        else
            throw UsageError(where + ": key " + key + " has an unsupported JSON value type");
    }
}

} // namespace

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();

    RunConfig cfg;
    const size_t first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        Json j;
        try {
            j = Json::parse(text);
        } catch (const Json::exception& e) {
            throw UsageError(path + ": invalid JSON config: " + e.what());
        }
        flatten_json(j, "", cfg, path);
    } else {
        std::istringstream lines(text);
        std::string line;
        int64_t lineno = 0;
        while (std::getline(lines, line)) {
            ++lineno;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const size_t eq = line.find('=');
            const std::string where = path + " line " + std::to_string(lineno);
            if (eq == std::string::npos)
                throw UsageError(where + ": expected 'key = value', got '" + line + "'");
            const std::string key = trim(line.substr(0, eq));
            const Binding* b = find_binding(key);
            if (!b) throw UsageError(where + ": unknown config key: " + key);
            set_value(cfg, *b, line.substr(eq + 1), where);
        }
    }
    cfg.validate();
    return cfg;
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw UsageError("--set expects key=value, got '" + assignment + "'");
    const std::string key = trim(assignment.substr(0, eq));
    const Binding* b = find_binding(key);
    if (!b) throw UsageError("unknown config key: " + key);
    set_value(cfg, *b, assignment.substr(eq + 1), "--set " + key);
}

std::string canonical_dump(const RunConfig& cfg, bool include_local) {
    std::string out;
    for (const Binding& b : bindings()) {
        if (b.local && !include_local) continue;
        out += b.key;
        out += " = ";
        out += value_str(cfg, b);
        out += '\n';
    }
    return out;
}

std::string annotated_dump(const RunConfig& cfg) {
    std::string out;
    bool first = true;
    for (const Binding& b : bindings()) {
        if (b.section) {
            if (!first) out += '\n';
            out += "# ";
            out += b.section;
            out += '\n';
        }
        first = false;
        out += b.key;
        out += " = ";
        out += value_str(cfg, b);
        if (b.comment) {
            out += "  # ";
            out += b.comment;
        }
        out += '\n';
    }
    return out;
}

std::string config_hash(const RunConfig& cfg) {
    return hash_hex(fnv1a64(canonical_dump(cfg, false)));
}

std::string data_config_hash(const RunConfig& cfg) {
    std::string scoped;
    std::istringstream lines(canonical_dump(cfg, false));
    std::string line;
    while (std::getline(lines, line)) {
        if (line.rfind("seed", 0) == 0 || line.rfind("data.", 0) == 0 ||
            line.rfind("synthetic.", 0) == 0)
            scoped += line + '\n';
    }
    return hash_hex(fnv1a64(scoped));
}

// ---------------------------------------------------------------- helpers ----

void RunConfig::validate() const {
    auto positive = [](int64_t v, const char* name) {
        if (v <= 0) throw UsageError(std::string("config: ") + name + " must be positive");
    };
    auto positive_d = [](double v, const char* name) {
        if (!(v > 0.0)) throw UsageError(std::string("config: ") + name + " must be positive");
    };
    positive(data_short_window, "data.short_window");
    positive(data_max_seq, "data.max_seq");
    positive(data_min_item_interactions, "data.min_item_interactions");
    positive(data_min_seq_len, "data.min_seq_len");
    if (data_samples_per_user < 0)
        throw UsageError("config: data.samples_per_user must be >= 0");
    if (!(data_t_train_end < data_t_val_end && data_t_val_end < data_t_test_end))
        throw UsageError("config: split boundaries must satisfy t_train_end < t_val_end < t_test_end");
    positive(synthetic_n_users, "synthetic.n_users");
    positive(synthetic_n_item_pairs, "synthetic.n_item_pairs");
    positive(synthetic_n_fillers, "synthetic.n_fillers");
    positive(synthetic_seq_len, "synthetic.seq_len");
    if (synthetic_p_long < 0.0 || synthetic_p_long > 1.0)
        throw UsageError("config: synthetic.p_long must be in [0,1]");
    positive(model_d_model, "model.d_model");
    positive(model_n_layers, "model.n_layers");
    positive(model_n_heads, "model.n_heads");
    positive(model_ff_dim, "model.ff_dim");
    positive(model_max_seq_len, "model.max_seq_len");
    if (model_split_layer < 1 || model_split_layer >= model_n_layers)
        throw UsageError("config: model.split_layer must be in [1, model.n_layers)");
    if (model_dropout < 0.0 || model_dropout >= 1.0)
        throw UsageError("config: model.dropout must be in [0,1)");
    positive_d(train_backbone_lr, "train.backbone_lr");
    positive(train_backbone_batch, "train.backbone_batch");
    positive(train_backbone_epochs, "train.backbone_epochs");
    if (train_p_prefix < 0.0 || train_p_prefix > 1.0)
        throw UsageError("config: train.p_prefix must be in [0,1]");
    positive_d(train_retriever_lr, "train.retriever_lr");
    positive(train_retriever_batch, "train.retriever_batch");
    positive(train_retriever_epochs, "train.retriever_epochs");
    positive(train_retriever_hidden, "train.retriever_hidden");
    if (train_patience < 0) throw UsageError("config: train.patience must be >= 0");
    positive_d(annotate_tau_label, "annotate.tau_label");
    pool_mode();   // throws on bad value
    encode_mode();
    k_list();
    if (workers < 0) throw UsageError("config: workers must be >= 0");
    if (kernels != "auto" && kernels != "scalar" && kernels != "avx2" && kernels != "avx512" &&
        kernels != "neon")
        throw UsageError("config: kernels must be one of auto|scalar|avx2|avx512|neon");
}

DataParams RunConfig::data_params() const {
    DataParams dp;
    dp.short_window = data_short_window;
    dp.max_seq = data_max_seq;
    dp.min_item_interactions = data_min_item_interactions;
    dp.min_seq_len = data_min_seq_len;
    dp.t_train_end = data_t_train_end;
    dp.t_val_end = data_t_val_end;
    dp.t_test_end = data_t_test_end;
    dp.samples_per_user = data_samples_per_user;
    return dp;
}

SyntheticConfig RunConfig::synthetic_config() const {
    SyntheticConfig sc;
    sc.n_users = synthetic_n_users;
    sc.n_item_pairs = synthetic_n_item_pairs;
    sc.n_fillers = synthetic_n_fillers;
    sc.seq_len = synthetic_seq_len;
    sc.anchor_lo = synthetic_anchor_lo;
    sc.anchor_hi = synthetic_anchor_hi;
    sc.p_long = synthetic_p_long;
    sc.seed = static_cast<uint64_t>(seed);
    return sc;
}

ModelConfig RunConfig::model_config(int64_t vocab_size) const {
    ModelConfig mc;
    mc.vocab_size = vocab_size;
    mc.d_model = model_d_model;
    mc.n_layers = model_n_layers;
    mc.split_layer = model_split_layer;
    mc.n_heads = model_n_heads;
    mc.ff_dim = model_ff_dim;
    mc.max_seq_len = model_max_seq_len;
    mc.dropout = model_dropout;
    return mc;
}

BackboneTrainConfig RunConfig::backbone_train_config() const {
    BackboneTrainConfig tc;
    tc.model = model_config();
    tc.lr = train_backbone_lr;
    tc.batch = train_backbone_batch;
    tc.epochs = train_backbone_epochs;
    tc.patience = train_patience;
    tc.p_prefix = train_p_prefix;
    tc.seed = static_cast<uint64_t>(seed);
    tc.workers = resolved_workers();
    tc.short_window = data_short_window;
    tc.pool = pool_mode();
    tc.encode = encode_mode();
    return tc;
}

RetrieverTrainConfig RunConfig::retriever_train_config() const {
    RetrieverTrainConfig tc;
    tc.hidden = train_retriever_hidden;
    tc.lr = train_retriever_lr;
    tc.batch = train_retriever_batch;
    tc.epochs = train_retriever_epochs;
    tc.patience = train_patience;
    tc.seed = static_cast<uint64_t>(seed);
    tc.workers = resolved_workers();
    return tc;
}

PoolMode RunConfig::pool_mode() const { return pool_mode_from_string(memory_pool); }
EncodeMode RunConfig::encode_mode() const { return encode_mode_from_string(memory_encode); }

std::vector<int64_t> RunConfig::k_list() const {
    std::vector<int64_t> ks;
    std::string tok;
    std::istringstream ss(eval_k_list);
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        errno = 0;
        char* end = nullptr;
        long long k = std::strtoll(tok.c_str(), &end, 10);
        if (end != tok.c_str() + tok.size() || errno == ERANGE || k < 1)
            throw UsageError("config: eval.k_list entries must be positive integers, got '" + tok +
                             "'");
        ks.push_back(static_cast<int64_t>(k));
    }
    if (ks.empty()) throw UsageError("config: eval.k_list must name at least one cutoff");
    return ks;
}

int RunConfig::resolved_workers() const {
    if (workers > 0) return static_cast<int>(workers);
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

namespace {
std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}
} // namespace

std::string RunConfig::events_path() const {
    return data_input.empty() ? join_path(out_dir, "events.jsonl") : data_input;
}
std::string RunConfig::split_path() const { return join_path(out_dir, "split.json"); }
std::string RunConfig::vocab_path() const { return join_path(out_dir, "vocab.json"); }
std::string RunConfig::backbone_path() const { return join_path(out_dir, "backbone.ckpt"); }
std::string RunConfig::banks_path() const { return join_path(out_dir, "banks.membank"); }
std::string RunConfig::annotations_path() const {
    const char* env = std::getenv("MRGR_CACHE_DIR");
    std::string dir = env && *env ? std::string(env) : (cache_dir.empty() ? out_dir : cache_dir);
    return join_path(dir, "annotations.jsonl");
}
std::string RunConfig::retriever_path() const { return join_path(out_dir, "retriever.ckpt"); }
std::string RunConfig::report_path(const std::string& variant,
                                   const std::string& split_name) const {
    return join_path(out_dir, "report_" + variant + "_" + split_name + ".json");
}
std::string RunConfig::compare_csv_path() const { return join_path(out_dir, "compare.csv"); }
std::string RunConfig::manifest_path(const std::string& stage) const {
    return join_path(out_dir, "manifest_" + stage + ".json");
}

} // namespace mrgr
