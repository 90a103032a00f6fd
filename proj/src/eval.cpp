#include "mrgr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "mrgr/errors.hpp"
#include "mrgr/hashing.hpp"
#include "mrgr/kernels.hpp"
#include "mrgr/rng.hpp"
#include "mrgr/threading.hpp"

namespace mrgr {

const char* to_string(BaselineKind k) {
    switch (k) {
        case BaselineKind::no_memory: return "no_memory";
        case BaselineKind::random_pick: return "random";
        case BaselineKind::semantic: return "semantic";
        case BaselineKind::oracle: return "oracle";
        case BaselineKind::learned: return "learned";
    }
    throw UsageError("unknown baseline kind");
}

BaselineKind baseline_from_string(const std::string& s) {
    if (s == "no_memory") return BaselineKind::no_memory;
    if (s == "random") return BaselineKind::random_pick;
    if (s == "semantic") return BaselineKind::semantic;
    if (s == "oracle") return BaselineKind::oracle;
    if (s == "learned") return BaselineKind::learned;
    throw UsageError("unknown variant: " + s +
                     " (expected no_memory|random|semantic|oracle|learned)");
}

// ----------------------------------------------------------------- ranking ----

int64_t rank_from_logits(const Tensor& logits, int32_t target_token) {
    if (logits.rank() != 1) throw ShapeError("rank_from_logits: logits must be rank 1");
    const int64_t vocab = logits.size();
    if (target_token < N_SPECIAL_TOKENS || target_token >= vocab)
        throw ShapeError("rank_from_logits: target " + std::to_string(target_token) +
                         " is not an item token");
    const double t = logits.data()[target_token];
    int64_t rank = 1;
    for (int64_t j = N_SPECIAL_TOKENS; j < vocab; ++j) {
        const double v = logits.data()[j];
        if (v > t || (v == t && j < target_token)) ++rank;
    }
    return rank;
}

std::vector<int32_t> ground_logits(const Tensor& logits, const ItemVocabulary& vocab) {
    if (logits.size() != vocab.token_count())
        throw ShapeError("ground_logits: logits length " + std::to_string(logits.size()) +
                         " != token count " + std::to_string(vocab.token_count()));
    std::vector<int32_t> order(static_cast<size_t>(vocab.item_count()));
    for (size_t i = 0; i < order.size(); ++i)
        order[i] = static_cast<int32_t>(i) + N_SPECIAL_TOKENS;
    std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        const double la = logits.data()[a], lb = logits.data()[b];
        if (la != lb) return la > lb;
        return a < b;
    });
    return order;
}

Tensor item_embedding_matrix(const BackboneParams& p, const ItemVocabulary& vocab) {
    if (p.config.vocab_size != vocab.token_count())
        throw ShapeError("item_embedding_matrix: vocabulary size mismatch");
    const int64_t n = vocab.item_count(), d = p.config.d_model;
    Tensor m = Tensor::zeros({n, d});
    for (int64_t i = 0; i < n; ++i) {
        const double* src = p.tok_emb.row(i + N_SPECIAL_TOKENS);
        std::copy(src, src + d, m.row(i));
    }
    return m;
}

std::vector<int32_t> ground_l2(const Tensor& query_vec, const Tensor& item_embeddings,
                               const ItemVocabulary& vocab) {
    if (item_embeddings.rows() != vocab.item_count())
        throw ShapeError("ground_l2: embedding rows != item count");
    if (query_vec.size() != item_embeddings.cols())
        throw ShapeError("ground_l2: query dimension " + std::to_string(query_vec.size()) +
                         " != embedding dimension " + std::to_string(item_embeddings.cols()));
    const int64_t n = item_embeddings.rows(), d = item_embeddings.cols();
    std::vector<double> dist2(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const double* row = item_embeddings.row(i);
        double acc = 0.0;
        for (int64_t c = 0; c < d; ++c) {
            const double diff = query_vec.data()[c] - row[c];
            acc += diff * diff;
        }
        dist2[static_cast<size_t>(i)] = acc;
    }
    std::vector<int32_t> order(static_cast<size_t>(n));
    for (size_t i = 0; i < order.size(); ++i)
        order[i] = static_cast<int32_t>(i) + N_SPECIAL_TOKENS;
    std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        const double da = dist2[static_cast<size_t>(a - N_SPECIAL_TOKENS)];
        const double db = dist2[static_cast<size_t>(b - N_SPECIAL_TOKENS)];
        if (da != db) return da < db;
        return a < b;
    });
    return order;
}

// ----------------------------------------------------------------- metrics ----

double recall_at_k(int64_t rank, int64_t k) {
    if (k < 1) throw UsageError("recall_at_k: K must be >= 1");
    if (rank < 1) throw ShapeError("recall_at_k: rank must be >= 1");
    return rank <= k ? 1.0 : 0.0;
}

double ndcg_at_k(int64_t rank, int64_t k) {
    if (k < 1) throw UsageError("ndcg_at_k: K must be >= 1");
    if (rank < 1) throw ShapeError("ndcg_at_k: rank must be >= 1");
    if (rank > k) return 0.0;
    return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

double percentile(std::vector<double> vals, double p) {
    if (vals.empty()) throw ShapeError("percentile: empty sample");
    if (!(p >= 0.0 && p <= 1.0)) throw UsageError("percentile: p must be in [0,1]");
    std::sort(vals.begin(), vals.end());
    const double h = p * static_cast<double>(vals.size() - 1);
    const size_t lo = static_cast<size_t>(h);
    if (lo + 1 >= vals.size()) return vals.back();
    const double frac = h - static_cast<double>(lo);
    return vals[lo] + frac * (vals[lo + 1] - vals[lo]);
}

// -------------------------------------------------------------------- runs ----

namespace {

const uint64_t kRandomPickTag = fnv1a64(std::string("eval_random_pick"));

double cosine(const double* a, const double* b, size_t n) {
    const double num = kern::dot(n, a, b);
    const double den = std::sqrt(kern::dot(n, a, a)) * std::sqrt(kern::dot(n, b, b));
    if (den == 0.0) return -std::numeric_limits<double>::infinity();
    return num / den;
}

} // namespace

MetricsReport run_eval(const std::vector<const Sample*>& samples, const std::string& split_name,
                       BaselineKind variant, const EvalModels& models, uint64_t seed,
                       const std::vector<int64_t>& k_list, int workers) {
    if (!models.backbone || !models.vocab)
        throw UsageError("run_eval: backbone and vocabulary are required");
    const bool uses_memory = variant != BaselineKind::no_memory;
    if (uses_memory && !models.store)
        throw UsageError(std::string("run_eval: variant ") + to_string(variant) +
                         " needs a memory bank store");
    if (variant == BaselineKind::learned && !models.retriever)
        throw UsageError("run_eval: learned variant needs a retriever checkpoint");
    for (int64_t k : k_list)
        if (k < 1) throw UsageError("run_eval: K values must be >= 1");

    const BackboneParams& p = *models.backbone;
    const ItemVocabulary& vocab = *models.vocab;
    const PoolMode pool = models.store ? models.store->pool() : PoolMode::last;

    struct Slot {
        bool evaluated = false;
        AuditRow row;
    };
    std::vector<Slot> slots(samples.size());

    parallel_chunks(samples.size(), 4, workers, [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) {
            const Sample& s = *samples[i];
            if (!vocab.contains(s.target_item)) continue;
            const int32_t target = vocab.token_of(s.target_item);
            const std::vector<int32_t> prompt = tokenize_prompt(s.window_items, vocab, p.config);

            const HiddenSeq base_states = encode_lower(p, prompt, nullptr);
            const Tensor base_logits = decode_upper(p, base_states);
            const int64_t no_mem_rank = rank_from_logits(base_logits, target);

            int64_t rank = no_mem_rank;
            int64_t retrieved_m = -1, retrieved_ts = 0;
            if (uses_memory) {
                MemoryBank bank = models.store->bank_for(s);
                if (!bank.entries.empty()) {
                    size_t idx = 0;
                    Tensor chosen_logits;
                    if (variant == BaselineKind::random_pick) {
                        Rng rng(derive_seed(seed, kRandomPickTag, fnv1a64(s.sample_id)));
                        idx = static_cast<size_t>(rng.below(bank.entries.size()));
                    } else if (variant == BaselineKind::semantic) {
                        const Tensor z_t = pool_states(base_states, pool);
                        double best = -std::numeric_limits<double>::infinity();
                        for (size_t m = 0; m < bank.entries.size(); ++m) {
                            const double c =
                                cosine(z_t.data(), bank.entries[m].z.data(),
                                       static_cast<size_t>(z_t.size()));
                            if (c > best) best = c, idx = m;
                        }
                    } else if (variant == BaselineKind::learned) {
                        const Tensor z_t = pool_states(base_states, pool);
                        idx = select_top(score(z_t, bank, *models.retriever));
                    } else { // oracle
                        const std::vector<int32_t> target_seq = {target};
                        const double p_base = sequence_prob(p, base_states, target_seq);
                        double best_delta = -std::numeric_limits<double>::infinity();
                        HiddenSeq best_states;
                        for (size_t m = 0; m < bank.entries.size(); ++m) {
                            HiddenSeq st = encode_lower(p, prompt, &bank.entries[m].z);
                            const double delta = sequence_prob(p, st, target_seq) - p_base;
                            if (delta > best_delta) {
                                best_delta = delta;
                                best_states = std::move(st);
                                idx = m;
                            }
                        }
                        chosen_logits = decode_upper(p, best_states);
                    }
                    if (chosen_logits.empty())
                        chosen_logits =
                            decode_upper(p, encode_lower(p, prompt, &bank.entries[idx].z));
                    rank = rank_from_logits(chosen_logits, target);
                    retrieved_m = bank.entries[idx].m;
                    retrieved_ts = bank.entries[idx].ts;
                }
            }

            Slot& slot = slots[i];
            slot.evaluated = true;
            slot.row.sample_id = s.sample_id;
            slot.row.target_rank = rank;
            slot.row.no_memory_rank = no_mem_rank;
            slot.row.retrieved_m = retrieved_m;
            slot.row.retrieved_ts = retrieved_ts;
            slot.row.improved = rank == 1 && no_mem_rank != 1;
            slot.row.first_ts = s.first_considered_ts;
            slot.row.target_ts = s.target_ts;
        }
    });

    MetricsReport report;
    report.variant = to_string(variant);
    report.split_name = split_name;
    report.seed = seed;
    report.k_list = k_list;
    std::map<std::string, double> sums;
    for (const Slot& slot : slots) {
        if (!slot.evaluated) {
            report.skipped += 1;
            continue;
        }
        report.evaluated += 1;
        report.rows.push_back(slot.row);
        for (int64_t k : k_list) {
            sums["recall@" + std::to_string(k)] += recall_at_k(slot.row.target_rank, k);
            sums["ndcg@" + std::to_string(k)] += ndcg_at_k(slot.row.target_rank, k);
        }
    }
    for (auto& [name, sum] : sums)
        report.metrics[name] =
            report.evaluated == 0 ? 0.0 : sum / static_cast<double>(report.evaluated);
    return report;
}

// ------------------------------------------------------------- report file ----

void save_report(const std::string& path, const MetricsReport& r) {
    Json j;
    j["format"] = "mrgr_report";
    j["version"] = 1;
    j["variant"] = r.variant;
    j["split"] = r.split_name;
    j["seed"] = r.seed;
    j["k_list"] = r.k_list;
    j["metrics"] = r.metrics;
    j["evaluated"] = r.evaluated;
    j["skipped"] = r.skipped;
    j["meta"] = r.meta.is_null() ? Json::object() : r.meta;
    Json rows = Json::array();
    for (const AuditRow& row : r.rows) {
        Json jr;
        jr["sample_id"] = row.sample_id;
        jr["target_rank"] = row.target_rank;
        jr["no_memory_rank"] = row.no_memory_rank;
        jr["retrieved_m"] = row.retrieved_m;
        jr["retrieved_ts"] = row.retrieved_ts;
        jr["improved"] = row.improved;
        jr["first_ts"] = row.first_ts;
        jr["target_ts"] = row.target_ts;
    rows.push_back(std::move(jr));
    }
    j["rows"] = std::move(rows);
    write_json_atomic(path, j);
}

MetricsReport load_report(const std::string& path) {
    Json j = read_json_file(path);
    if (!j.is_object() || j.value("format", std::string()) != "mrgr_report")
        throw FormatError("not an evaluation report: " + path);
    try {
        MetricsReport r;
        r.variant = j.at("variant").get<std::string>();
        r.split_name = j.at("split").get<std::string>();
        r.seed = j.at("seed").get<uint64_t>();
        r.k_list = j.at("k_list").get<std::vector<int64_t>>();
        r.metrics = j.at("metrics").get<std::map<std::string, double>>();
        r.evaluated = j.at("evaluated").get<int64_t>();
        r.skipped = j.at("skipped").get<int64_t>();
        r.meta = j.value("meta", Json::object());
        for (const Json& jr : j.at("rows")) {
            AuditRow row;
            row.sample_id = jr.at("sample_id").get<std::string>();
            row.target_rank = jr.at("target_rank").get<int64_t>();
            row.no_memory_rank = jr.at("no_memory_rank").get<int64_t>();
            row.retrieved_m = jr.at("retrieved_m").get<int64_t>();
            row.retrieved_ts = jr.at("retrieved_ts").get<int64_t>();
            row.improved = jr.at("improved").get<bool>();
            row.first_ts = jr.at("first_ts").get<int64_t>();
            row.target_ts = jr.at("target_ts").get<int64_t>();
            r.rows.push_back(std::move(row));
        }
        return r;
    } catch (const Json::exception& e) {
        throw FormatError("report " + path + ": " + e.what());
    }
}

// -------------------------------------------------------------- comparison ----

Comparison compare(const std::vector<MetricsReport>& reports) {
    if (reports.size() < 2) throw UsageError("compare: need at least two reports");
    for (const MetricsReport& r : reports) {
        if (r.split_name != reports[0].split_name)
            throw UsageError("compare: reports span different splits ('" +
                             reports[0].split_name + "' vs '" + r.split_name + "')");
        if (r.k_list != reports[0].k_list)
            throw UsageError("compare: reports use different K lists");
    }
    Comparison c;
    c.k_list = reports[0].k_list;
    for (const MetricsReport& r : reports) {
        std::string key = r.variant;
        if (c.table.count(key)) key += "#" + std::to_string(r.seed);
        if (c.table.count(key))
            throw UsageError("compare: duplicate report for variant " + r.variant);
        c.variants.push_back(key);
        c.table[key] = r.metrics;
        std::vector<double> improvements;
        improvements.reserve(r.rows.size());
        for (const AuditRow& row : r.rows)
            improvements.push_back(1.0 / static_cast<double>(row.target_rank) -
                                   1.0 / static_cast<double>(row.no_memory_rank));
        if (!improvements.empty())
            c.improvement_percentiles[key] = {percentile(improvements, 0.25),
                                              percentile(improvements, 0.50),
                                              percentile(improvements, 0.75)};
    }
    return c;
}

std::string format_comparison(const Comparison& c) {
    std::vector<std::string> metric_names;
    for (int64_t k : c.k_list) metric_names.push_back("recall@" + std::to_string(k));
    for (int64_t k : c.k_list) metric_names.push_back("ndcg@" + std::to_string(k));
    metric_names.insert(metric_names.end(), {"imp_p25", "imp_p50", "imp_p75"});

    size_t name_w = 7;
    for (const std::string& v : c.variants) name_w = std::max(name_w, v.size());

    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", v);
        return std::string(buf);
    };

    std::string out = "variant";
    out.append(name_w - 7, ' ');
    for (const std::string& m : metric_names) out += "  " + m;
    out += '\n';
    for (const std::string& v : c.variants) {
        out += v;
        out.append(name_w - v.size(), ' ');
        const auto& metrics = c.table.at(v);
        for (const std::string& m : metric_names) {
            std::string cell;
            if (m.rfind("imp_", 0) == 0) {
                auto it = c.improvement_percentiles.find(v);
                if (it == c.improvement_percentiles.end())
                    cell = "-";
                else
                    cell = fmt(it->second[m == "imp_p25" ? 0 : m == "imp_p50" ? 1 : 2]);
            } else {
                auto it = metrics.find(m);
                cell = it == metrics.end() ? "-" : fmt(it->second);
            }
            if (cell.size() < m.size()) cell = std::string(m.size() - cell.size(), ' ') + cell;
            out += "  " + cell;
        }
        out += '\n';
    }
    return out;
}

void write_compare_csv(const std::string& path, const std::vector<MetricsReport>& reports) {
    std::ofstream out(path + ".tmp", std::ios::trunc);
    if (!out) throw IoError("cannot write: " + path + ".tmp");
    out << "sample_id,variant,seed,retrieved_index,retrieved_ts,improved,first_ts,target_ts\n";
    for (const MetricsReport& r : reports) {
        if (r.variant == "no_memory") continue;
        for (const AuditRow& row : r.rows) {
            out << row.sample_id << ',' << r.variant << ',' << r.seed << ',' << row.retrieved_m
                << ',' << row.retrieved_ts << ',' << (row.improved ? 1 : 0) << ','
                << row.first_ts << ',' << row.target_ts << '\n';
        }
    }
    if (!out) throw IoError("write failed: " + path + ".tmp");
    out.close();
    std::error_code ec;
    std::filesystem::rename(path + ".tmp", path, ec);
    if (ec) throw IoError("rename " + path + ".tmp -> " + path + ": " + ec.message());
}

} // namespace mrgr
