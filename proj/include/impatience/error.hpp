#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace impatience {

enum class errc {
    domain,
    invalid_config,
    degenerate_data,
    non_convergence,
    mismatched_data,
    empty_cell,
    unknown_interval,
    stale_trial,
    session_complete,
    incomplete,
    out_of_range,
    cap_exceeded,
    schema_mismatch,
    corrupt_event,
};

constexpr std::string_view to_string(errc code) noexcept {
    switch (code) {
    case errc::domain: return "DomainError";
    case errc::invalid_config: return "InvalidConfig";
    case errc::degenerate_data: return "DegenerateData";
    case errc::non_convergence: return "NonConvergence";
    case errc::mismatched_data: return "MismatchedData";
    case errc::empty_cell: return "EmptyCell";
    case errc::unknown_interval: return "UnknownInterval";
    case errc::stale_trial: return "StaleTrial";
    case errc::session_complete: return "SessionComplete";
    case errc::incomplete: return "Incomplete";
    case errc::out_of_range: return "OutOfRange";
    case errc::cap_exceeded: return "CapExceeded";
    case errc::schema_mismatch: return "SchemaMismatch";
    case errc::corrupt_event: return "CorruptEvent";
    }
    return "Unknown";
}

// Single exception type for the library; callers branch on code().
class error : public std::runtime_error {
public:
    error(errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    errc code() const noexcept { return code_; }

private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw error(code, what); }

inline void require(bool ok, errc code, const char* what) {
    if (!ok) fail(code, what);
}

} // namespace impatience
