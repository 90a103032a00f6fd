#pragma once

// Thin wrapper over the vendored nlohmann/json single header. nlohmann's
// default object type keeps keys in std::map order, so every dump of the
// same logical content is byte-identical — which the manifest hash chain
// relies on.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "mrgr/errors.hpp"

namespace mrgr {

using Json = nlohmann::json;

inline Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw FormatError(path + ": invalid JSON (" + e.what() + ")");
    }
}

// Write-to-temp + rename so readers never observe a half-written file.
inline void write_json_atomic(const std::string& path, const Json& j) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("cannot write: " + tmp);
        out << j.dump(2) << '\n';
        if (!out) throw IoError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
}

} // namespace mrgr
