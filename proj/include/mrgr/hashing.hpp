#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace mrgr {

// FNV-1a 64-bit. Fast, dependency-free, and stable across platforms; used
// for artifact fingerprints in manifests, not for security.
inline constexpr uint64_t FNV_OFFSET = 0xcbf29ce484222325ULL;
inline constexpr uint64_t FNV_PRIME = 0x100000001b3ULL;

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = FNV_OFFSET) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= FNV_PRIME;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = FNV_OFFSET) {
    return fnv1a64(s.data(), s.size(), h);
}

std::string hash_hex(uint64_t h);

// Streamed hash of a file's bytes; throws IoError if unreadable.
uint64_t file_hash(const std::string& path);
std::string file_hash_hex(const std::string& path);

} // namespace mrgr
