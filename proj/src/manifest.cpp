#include "mrgr/manifest.hpp"

#include <algorithm>
#include <filesystem>

#include "mrgr/errors.hpp"
#include "mrgr/hashing.hpp"

namespace mrgr {

namespace {

Json refs_to_json(const std::map<std::string, FileRef>& refs) {
    Json j = Json::object();
    for (const auto& [name, ref] : refs) j[name] = Json{{"path", ref.path}, {"hash", ref.hash}};
    return j;
}

std::map<std::string, FileRef> refs_from_json(const Json& j) {
    std::map<std::string, FileRef> refs;
    for (const auto& [name, v] : j.items())
        refs[name] = FileRef{v.at("path").get<std::string>(), v.at("hash").get<std::string>()};
    return refs;
}

} // namespace

void save_manifest(const std::string& path, const RunManifest& m) {
    Json j;
    j["format"] = "mrgr_manifest";
    j["version"] = m.version;
    j["stage"] = m.stage;
    j["config_hash"] = m.config_hash;
    j["config_text"] = m.config_text;
    j["seed"] = m.seed;
    j["inputs"] = refs_to_json(m.inputs);
    j["outputs"] = refs_to_json(m.outputs);
    j["wall_ms"] = m.wall_ms;
    j["counters"] = m.counters;
    write_json_atomic(path, j);
}

RunManifest load_manifest(const std::string& path) {
    Json j = read_json_file(path);
    if (!j.is_object() || j.value("format", std::string()) != "mrgr_manifest")
        throw FormatError("not a run manifest: " + path);
    RunManifest m;
    m.version = j.at("version").get<int64_t>();
    m.stage = j.at("stage").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config_text = j.at("config_text").get<std::string>();
    m.seed = j.at("seed").get<int64_t>();
    m.inputs = refs_from_json(j.at("inputs"));
    m.outputs = refs_from_json(j.at("outputs"));
    m.wall_ms = j.at("wall_ms").get<int64_t>();
    m.counters = j.at("counters");
    return m;
}

FileRef file_ref(const std::string& path) { return FileRef{path, file_hash_hex(path)}; }

std::vector<std::string> verify_run_dir(const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(out_dir)) throw UsageError("not a directory: " + out_dir);

    std::vector<std::string> manifest_paths;
    for (const auto& entry : fs::directory_iterator(out_dir)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_regular_file() && name.rfind("manifest_", 0) == 0 &&
            name.size() > 5 && name.substr(name.size() - 5) == ".json")
            manifest_paths.push_back(entry.path().string());
    }
    std::sort(manifest_paths.begin(), manifest_paths.end());
    if (manifest_paths.empty())
        throw UsageError("no run manifests found in " + out_dir);

    std::vector<RunManifest> manifests;
    for (const std::string& p : manifest_paths) manifests.push_back(load_manifest(p));

    // Map each artifact path to the stage that produced it and the hash that
    // stage recorded, so an input mismatch can name the right stage to rerun:
    // if the producer's own record matches the bytes on disk, the producer
    // legitimately regenerated the file and the *consumer* is stale; if not,
    // the artifact itself rotted and the producer must run again.
    std::map<std::string, std::pair<std::string, std::string>> producer; // path -> {stage, hash}
    for (const RunManifest& m : manifests)
        for (const auto& [name, ref] : m.outputs) producer[ref.path] = {m.stage, ref.hash};

    std::vector<std::string> problems;
    auto check = [&](const RunManifest& m, const char* role, const std::string& name,
                     const FileRef& ref) {
        const bool is_input = std::string(role) == "input";
        auto prod = producer.find(ref.path);
        const std::string producer_stage =
            prod != producer.end() ? prod->second.first : std::string("prepare-data");
        if (!fs::exists(ref.path)) {
            problems.push_back("stage " + m.stage + ": " + role + " '" + name + "' missing (" +
                               ref.path + "); rerun " + (is_input ? producer_stage : m.stage));
            return;
        }
        const std::string now = file_hash_hex(ref.path);
        if (now == ref.hash) return;
        std::string rerun = m.stage;
        if (is_input && !(prod != producer.end() && prod->second.second == now))
            rerun = producer_stage;
        problems.push_back("stage " + m.stage + ": " + role + " '" + name + "' changed (" +
                           ref.path + " recorded " + ref.hash + ", found " + now + "); rerun " +
                           rerun);
    };
    for (const RunManifest& m : manifests) {
        for (const auto& [name, ref] : m.inputs) check(m, "input", name, ref);
        for (const auto& [name, ref] : m.outputs) check(m, "output", name, ref);
    }
    return problems;
}

} // namespace mrgr
