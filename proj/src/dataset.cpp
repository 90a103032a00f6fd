#include "mrgr/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "mrgr/errors.hpp"
#include "mrgr/json.hpp"

namespace mrgr {

std::vector<InteractionEvent> ingest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open events file: " + path);
    std::vector<InteractionEvent> out;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // Skip blank lines (trailing newline friendliness).
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const std::exception& e) {
            throw FormatError("events line " + std::to_string(lineno) + ": invalid JSON (" +
                              e.what() + ")");
        }
        if (!j.is_object())
            throw FormatError("events line " + std::to_string(lineno) + ": not a JSON object");
        InteractionEvent ev;
        auto need = [&](const char* key) -> const Json& {
            auto it = j.find(key);
            if (it == j.end())
                throw FormatError("events line " + std::to_string(lineno) + ": missing field '" +
                                  key + "'");
            return *it;
        };
        const Json& ju = need("user");
        const Json& ji = need("item");
        const Json& jt = need("ts");
        if (!ju.is_string())
            throw FormatError("events line " + std::to_string(lineno) + ": 'user' must be a string");
        if (!ji.is_string())
            throw FormatError("events line " + std::to_string(lineno) + ": 'item' must be a string");
        if (!jt.is_number_integer())
            throw FormatError("events line " + std::to_string(lineno) + ": 'ts' must be an integer");
        ev.user = ju.get<std::string>();
        ev.item = ji.get<std::string>();
        ev.ts = jt.get<int64_t>();
        if (ev.user.empty())
            throw FormatError("events line " + std::to_string(lineno) + ": 'user' is empty");
        if (ev.item.empty())
            throw FormatError("events line " + std::to_string(lineno) + ": 'item' is empty");
        out.push_back(std::move(ev));
    }
    return out;
}

FilteredData filter_and_sequence(const std::vector<InteractionEvent>& events,
                                 int64_t min_item_interactions, int64_t min_seq_len) {
    if (min_item_interactions < 1) throw UsageError("min_item_interactions must be >= 1");
    if (min_seq_len < 1) throw UsageError("min_seq_len must be >= 1");

    // Iterate to a fixed point: dropping a user removes its events, which can
    // push items below threshold, which can shrink other users, and so on.
    std::vector<char> alive(events.size(), 1);
    bool changed = true;
    while (changed) {
        changed = false;
        std::unordered_map<std::string, int64_t> item_count;
        for (size_t i = 0; i < events.size(); ++i)
            if (alive[i]) ++item_count[events[i].item];
        for (size_t i = 0; i < events.size(); ++i) {
            if (alive[i] && item_count[events[i].item] < min_item_interactions) {
                alive[i] = 0;
                changed = true;
            }
        }
        std::unordered_map<std::string, int64_t> user_count;
        for (size_t i = 0; i < events.size(); ++i)
            if (alive[i]) ++user_count[events[i].user];
        for (size_t i = 0; i < events.size(); ++i) {
            if (alive[i] && user_count[events[i].user] < min_seq_len) {
                alive[i] = 0;
                changed = true;
            }
        }
    }

    std::map<std::string, std::vector<InteractionEvent>> per_user; // sorted by user id
    std::set<std::string> items;
    for (size_t i = 0; i < events.size(); ++i) {
        if (!alive[i]) continue;
        per_user[events[i].user].push_back(events[i]);
        items.insert(events[i].item);
    }
    if (per_user.empty())
        throw FormatError("filtering removed every event: no user/item survives thresholds "
                          "(min_item_interactions=" + std::to_string(min_item_interactions) +
                          ", min_seq_len=" + std::to_string(min_seq_len) + ")");

    FilteredData fd;
    for (auto& [user, evs] : per_user) {
        std::stable_sort(evs.begin(), evs.end(),
                         [](const InteractionEvent& a, const InteractionEvent& b) {
                             return a.ts < b.ts;
                         });
        fd.sequences.push_back(UserSequence{user, std::move(evs)});
    }
    fd.vocab = ItemVocabulary::build(std::vector<std::string>(items.begin(), items.end()));
    return fd;
}

WindowResult window(const UserSequence& seq, int64_t cut, int64_t short_window, int64_t max_seq) {
    const int64_t n = static_cast<int64_t>(seq.events.size());
    if (cut < 1 || cut > n)
        throw ShapeError("window cut " + std::to_string(cut) + " outside [1," + std::to_string(n) +
                         "] for user " + seq.user);
    if (short_window < 1) throw UsageError("short_window must be >= 1");
    if (max_seq < short_window) throw UsageError("max_seq must be >= short_window");

    const int64_t considered = std::min(cut, max_seq);
    const int64_t lo = cut - considered; // 0-based start of the considered range
    const int64_t h_len = std::min(considered, short_window);
    WindowResult wr;
    wr.first_considered_ts = seq.events[static_cast<size_t>(lo)].ts;
    for (int64_t i = cut - h_len; i < cut; ++i)
        wr.h_items.push_back(seq.events[static_cast<size_t>(i)].item);
    wr.n_cands = considered - h_len;
    wr.cand_lo = wr.n_cands > 0 ? lo + 1 : 0; // 1-based interaction index
    return wr;
}

std::vector<std::string> memory_window_items(const UserSequence& seq, int64_t m,
                                             int64_t short_window) {
    const int64_t n = static_cast<int64_t>(seq.events.size());
    if (m < 1 || m > n)
        throw ShapeError("memory index " + std::to_string(m) + " outside [1," + std::to_string(n) +
                         "] for user " + seq.user);
    const int64_t lo = std::max<int64_t>(0, m - short_window);
    std::vector<std::string> items;
    for (int64_t i = lo; i < m; ++i) items.push_back(seq.events[static_cast<size_t>(i)].item);
    return items;
}

DatasetSplit split_chronological(const std::vector<UserSequence>& sequences, const DataParams& dp) {
    if (!(dp.t_train_end < dp.t_val_end && dp.t_val_end < dp.t_test_end))
        throw UsageError("split boundaries must satisfy t_train_end < t_val_end < t_test_end");

    DatasetSplit out;
    for (const auto& seq : sequences) {
        const int64_t n = static_cast<int64_t>(seq.events.size());
        // A sample needs at least one previous event; targets after t_test_end
        // fall outside every interval and are dropped.
        std::vector<Sample> tr, va, te;
        for (int64_t cut = 1; cut < n; ++cut) {
            const InteractionEvent& target = seq.events[static_cast<size_t>(cut)];
            if (target.ts > dp.t_test_end) continue;
            // Leakage guard: if the final history event carries the target's
            // timestamp the ordering between them is unknowable, so skip.
            if (seq.events[static_cast<size_t>(cut - 1)].ts == target.ts) continue;
            WindowResult wr = window(seq, cut, dp.short_window, dp.max_seq);
            Sample s;
            s.user = seq.user;
            s.cut = cut;
            s.sample_id = seq.user + "@" + std::to_string(cut);
            s.target_item = target.item;
            s.target_ts = target.ts;
            s.window_items = std::move(wr.h_items);
            s.cand_lo = wr.cand_lo;
            s.n_cands = wr.n_cands;
            s.first_considered_ts = wr.first_considered_ts;
            if (target.ts <= dp.t_train_end)
                tr.push_back(std::move(s));
            else if (target.ts <= dp.t_val_end)
                va.push_back(std::move(s));
            else
                te.push_back(std::move(s));
        }
        auto take_latest = [&](std::vector<Sample>& v, std::vector<Sample>& dst) {
            if (dp.samples_per_user > 0 &&
                static_cast<int64_t>(v.size()) > dp.samples_per_user) {
                v.erase(v.begin(), v.end() - dp.samples_per_user);
            }
            for (auto& s : v) dst.push_back(std::move(s));
        };
        take_latest(tr, out.train);
        take_latest(va, out.val);
        take_latest(te, out.test);
    }
    return out;
}

SequenceIndex::SequenceIndex(const std::vector<UserSequence>& seqs) {
    for (const auto& s : seqs) {
        if (!index_.emplace(s.user, &s).second)
            throw ShapeError("duplicate user sequence: " + s.user);
    }
}

const UserSequence& SequenceIndex::by_user(const std::string& user) const {
    auto it = index_.find(user);
    if (it == index_.end()) throw ShapeError("unknown user: " + user);
    return *it->second;
}

// ------------------------------------------------------------- persistence ----

static Json sample_to_json(const Sample& s) {
    Json j;
    j["sample_id"] = s.sample_id;
    j["user"] = s.user;
    j["cut"] = s.cut;
    j["target_item"] = s.target_item;
    j["target_ts"] = s.target_ts;
    j["window_items"] = s.window_items;
    j["cand_lo"] = s.cand_lo;
    j["n_cands"] = s.n_cands;
    j["first_considered_ts"] = s.first_considered_ts;
    return j;
}

static Sample sample_from_json(const Json& j) {
    Sample s;
    s.sample_id = j.at("sample_id").get<std::string>();
    s.user = j.at("user").get<std::string>();
    s.cut = j.at("cut").get<int64_t>();
    s.target_item = j.at("target_item").get<std::string>();
    s.target_ts = j.at("target_ts").get<int64_t>();
    s.window_items = j.at("window_items").get<std::vector<std::string>>();
    s.cand_lo = j.at("cand_lo").get<int64_t>();
    s.n_cands = j.at("n_cands").get<int64_t>();
    s.first_considered_ts = j.at("first_considered_ts").get<int64_t>();
    return s;
}

void save_split(const std::string& path, const DatasetSplit& split, const DataParams& dp,
                const std::string& events_path, const std::string& events_hash,
                const std::string& config_hash) {
    Json j;
    j["format"] = "mrgr_split";
    j["version"] = 1;
    j["events_path"] = events_path;
    j["events_hash"] = events_hash;
    j["config_hash"] = config_hash;
    Json params;
    params["short_window"] = dp.short_window;
    params["max_seq"] = dp.max_seq;
    params["min_item_interactions"] = dp.min_item_interactions;
    params["min_seq_len"] = dp.min_seq_len;
    params["t_train_end"] = dp.t_train_end;
    params["t_val_end"] = dp.t_val_end;
    params["t_test_end"] = dp.t_test_end;
    params["samples_per_user"] = dp.samples_per_user;
    j["params"] = params;
    for (const char* name : {"train", "val", "test"}) {
        const std::vector<Sample>& v = name == std::string("train") ? split.train
                                       : name == std::string("val") ? split.val
                                                                    : split.test;
        Json arr = Json::array();
        for (const Sample& s : v) arr.push_back(sample_to_json(s));
        j[name] = std::move(arr);
    }
    write_json_atomic(path, j);
}

LoadedSplit load_split(const std::string& path) {
    Json j = read_json_file(path);
    if (!j.is_object() || j.value("format", std::string()) != "mrgr_split")
        throw FormatError("not a split manifest: " + path);
    LoadedSplit ls;
    ls.events_path = j.at("events_path").get<std::string>();
    ls.events_hash = j.at("events_hash").get<std::string>();
    ls.config_hash = j.at("config_hash").get<std::string>();
    const Json& params = j.at("params");
    ls.params.short_window = params.at("short_window").get<int64_t>();
    ls.params.max_seq = params.at("max_seq").get<int64_t>();
    ls.params.min_item_interactions = params.at("min_item_interactions").get<int64_t>();
    ls.params.min_seq_len = params.at("min_seq_len").get<int64_t>();
    ls.params.t_train_end = params.at("t_train_end").get<int64_t>();
    ls.params.t_val_end = params.at("t_val_end").get<int64_t>();
    ls.params.t_test_end = params.at("t_test_end").get<int64_t>();
    ls.params.samples_per_user = params.at("samples_per_user").get<int64_t>();
    for (const char* name : {"train", "val", "test"}) {
        std::vector<Sample>& v = name == std::string("train") ? ls.split.train
                                 : name == std::string("val") ? ls.split.val
                                                              : ls.split.test;
        for (const Json& js : j.at(name)) v.push_back(sample_from_json(js));
    }
    return ls;
}

} // namespace mrgr
