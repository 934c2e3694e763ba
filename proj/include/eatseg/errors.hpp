#pragma once

#include <stdexcept>
#include <string>

namespace eatseg {

enum class ErrorKind {
    invalid_argument,
    not_found,
    missing_asset,
    parse,
    configuration,
    data_leak,
    undefined_correlation,
    divergence,
    format,
    io,
};

const char* to_string(ErrorKind kind);

/// Every library failure is an `Error` tagged with a kind; the CLI maps kinds to exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

}  // namespace eatseg
