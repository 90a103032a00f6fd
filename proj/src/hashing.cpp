#include "mrgr/hashing.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

#include "mrgr/errors.hpp"

namespace mrgr {

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file for hashing: " + path);
    uint64_t h = FNV_OFFSET;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        std::streamsize got = in.gcount();
        if (got > 0) h = fnv1a64(buf.data(), static_cast<size_t>(got), h);
    }
    return h;
}

std::string file_hash_hex(const std::string& path) { return hash_hex(file_hash(path)); }

} // namespace mrgr
