#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dku {

/// Failure categories surfaced to callers and to the CLI's machine-readable error line.
enum class ErrorCode {
    invalid_argument,
    grid_mismatch,
    grid_too_coarse,
    out_of_range,
    parse_error,
    io_error,
    internal_error,
};

inline std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::grid_mismatch: return "grid_mismatch";
    case ErrorCode::grid_too_coarse: return "grid_too_coarse";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::internal_error: return "internal_error";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& what)
{
    if (!condition)
        throw Error(code, what);
}

} // namespace dku
