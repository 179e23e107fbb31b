#pragma once

#include <stdexcept>
#include <string>

namespace tag {

enum class error_code {
    invalid_argument,
    empty_candidate_set,
    group_too_small,
    alphabet_mismatch,
    schema_violation,
    leakage,
    empty_evaluation,
    unserializable_trace,
    io,
    transport,
};

const char* to_string(error_code code);

class error : public std::runtime_error {
public:
    error(error_code code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    error_code code() const noexcept { return code_; }

    /// 2 for I/O and transport failures, 1 for everything else.
    int exit_code() const noexcept {
        return (code_ == error_code::io || code_ == error_code::transport) ? 2 : 1;
    }

private:
    error_code code_;
};

} // namespace tag
