#pragma once

#include <stdexcept>
#include <string>

namespace fbp {

/// Failure categories shared by all solvers. The CLI maps these to exit codes.
enum class ErrorKind {
    InvalidArgument,
    Inadmissible,
    AdmissibilityLost,
    NewtonDiverged,
    StepTooSmall,
    NotConverged,
    FreeBoundaryTouchesSlab,
    NotStrictlyConvexInT,
    SlabTooSmall,
    NonMonotoneTheta,
    VanishingVerticalDerivative,
    NotNormalized,
    NotPositive,
    NonContiguousActiveSet,
    BlowUp,
    Singular,
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Inadmissible: return "Inadmissible";
    case ErrorKind::AdmissibilityLost: return "AdmissibilityLost";
    case ErrorKind::NewtonDiverged: return "NewtonDiverged";
    case ErrorKind::StepTooSmall: return "StepTooSmall";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::FreeBoundaryTouchesSlab: return "FreeBoundaryTouchesSlab";
    case ErrorKind::NotStrictlyConvexInT: return "NotStrictlyConvexInT";
    case ErrorKind::SlabTooSmall: return "SlabTooSmall";
    case ErrorKind::NonMonotoneTheta: return "NonMonotoneTheta";
    case ErrorKind::VanishingVerticalDerivative: return "VanishingVerticalDerivative";
    case ErrorKind::NotNormalized: return "NotNormalized";
    case ErrorKind::NotPositive: return "NotPositive";
    case ErrorKind::NonContiguousActiveSet: return "NonContiguousActiveSet";
    case ErrorKind::BlowUp: return "BlowUp";
    case ErrorKind::Singular: return "Singular";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    /// Precondition and configuration failures, as opposed to solver failures.
    bool is_usage_error() const noexcept {
        return kind_ == ErrorKind::InvalidArgument || kind_ == ErrorKind::NotNormalized ||
               kind_ == ErrorKind::NotPositive || kind_ == ErrorKind::Inadmissible;
    }

private:
    ErrorKind kind_;
};

inline void require(bool cond, const std::string& what,
                    ErrorKind kind = ErrorKind::InvalidArgument) {
    if (!cond) throw Error(kind, what);
}

} // namespace fbp
