#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace btm {

// Categories are stable strings; the CLI prints them as the first token of
// an error line so scripts can match on them.
enum class ErrorKind {
    invalid_argument,
    config,
    io,
    checksum,
    version,
    numeric,
    not_found,
    conflict,
    worker,
    predicate,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::checksum: return "checksum";
    case ErrorKind::version: return "version";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::worker: return "worker";
    case ErrorKind::predicate: return "predicate";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) {
        throw Error(kind, message);
    }
}

} // namespace btm
