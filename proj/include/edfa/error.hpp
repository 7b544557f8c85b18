#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace edfa {

/// Coarse failure classes. The CLI prints category_name() as a single token so
/// callers can branch on it without parsing prose.
enum class ErrorCategory {
    InvalidArgument,
    Schema,
    Io,
    GridMismatch,
    FitInsufficientSamples,
    FitNonMonotone,
    SetpointUnreachable,
    SolveOutOfBracket,
    AseInconsistent,
    IntegratorUnderflow,
    TrainingDiverged,
    EmptySplit,
    InfeasibleExperiment,
};

std::string_view category_name(ErrorCategory c);

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

}  // namespace edfa
