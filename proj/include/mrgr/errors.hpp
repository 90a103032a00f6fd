#pragma once

#include <stdexcept>
#include <string>

namespace mrgr {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map failures onto exit codes uniformly: usage/input problems exit 2,
// internal invariant violations exit 1.

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad shapes, dimension mismatches, out-of-range indices.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// Non-finite values, invalid distributions, numeric preconditions.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

// Malformed input files: events, configs, containers, caches.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

// An artifact was produced against a different upstream artifact than the
// one currently on disk. The message names the stage to rerun.
class StaleArtifactError : public Error {
public:
    explicit StaleArtifactError(const std::string& msg) : Error("stale artifact: " + msg) {}
};

// A pipeline stage was invoked before the stage it depends on.
class MissingDependencyError : public Error {
public:
    explicit MissingDependencyError(const std::string& msg) : Error("missing dependency: " + msg) {}
};

// Scoring was asked for an empty memory bank. Recommendation paths catch
// this and fall back to the null prefix.
class EmptyMemoryError : public Error {
public:
    explicit EmptyMemoryError(const std::string& msg) : Error("empty memory: " + msg) {}
};

// Bad CLI arguments or config values.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error("usage error: " + msg) {}
};

// File-system level trouble: missing files, failed writes.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

} // namespace mrgr
