#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace caprec {

enum class ErrorCode {
    InvalidPattern,
    ZeroPatternObserved,
    EmptyInput,
    InvalidArgument,
    DegenerateDenominator,
    IdentificationFailure,
    UndefinedEstimand,
    OutOfRange,
    FitFailure,
    InvalidEpsilon,
    InvalidDgp,
    ParseError,
};

std::string_view error_name(ErrorCode code) noexcept;

// Single exception type for the library; callers branch on code().
class CaptureError : public std::runtime_error {
public:
    CaptureError(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Non-fatal conditions attached to results. Stored as stable names so they
// survive serialization unchanged.
namespace warning {
inline constexpr std::string_view kOutOfRange = "OutOfRangeWarning";
inline constexpr std::string_view kUndersmoothingIncomplete = "UndersmoothingIncomplete";
inline constexpr std::string_view kNonConvergence = "NonConvergence";
inline constexpr std::string_view kFoldsReduced = "FoldsReduced";
inline constexpr std::string_view kBoundaryFit = "BoundaryFit";
}  // namespace warning

}  // namespace caprec
