#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nexp {

enum class ErrorKind {
    InvalidArgument,
    SimulationDiverged,
    InvalidArchitecture,
    SingularRegression,
    SolverDiverged,
    OracleOverflow,
    InvalidComparisonPair,
    InvalidDriver,
    NoContraction,
    TrainingDiverged,
    NoFixedPoint,
    IncompleteCoefficients,
    UnstableGrid,
    SolverInconsistent,
    ConfigError,
};

constexpr std::string_view to_string(ErrorKind k) noexcept {
    switch (k) {
        case ErrorKind::InvalidArgument: return "invalid-argument";
        case ErrorKind::SimulationDiverged: return "simulation-diverged";
        case ErrorKind::InvalidArchitecture: return "invalid-architecture";
        case ErrorKind::SingularRegression: return "singular-regression";
        case ErrorKind::SolverDiverged: return "solver-diverged";
        case ErrorKind::OracleOverflow: return "oracle-overflow";
        case ErrorKind::InvalidComparisonPair: return "invalid-comparison-pair";
        case ErrorKind::InvalidDriver: return "invalid-driver";
        case ErrorKind::NoContraction: return "no-contraction";
        case ErrorKind::TrainingDiverged: return "training-diverged";
        case ErrorKind::NoFixedPoint: return "no-fixed-point";
        case ErrorKind::IncompleteCoefficients: return "incomplete-coefficients";
        case ErrorKind::UnstableGrid: return "unstable-grid";
        case ErrorKind::SolverInconsistent: return "solver-inconsistent";
        case ErrorKind::ConfigError: return "config-error";
    }
    return "unknown";
}

/// Every failure raised by the library carries a kind so callers (and the CLI
/// exit-code mapping) can dispatch without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

inline void require(bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::InvalidArgument, what);
}

/// Rethrow with extra context prepended, keeping the kind.
[[noreturn]] inline void rethrow_with_context(const Error& e, const std::string& context) {
    std::string msg = e.what();
    auto colon = msg.find(": ");
    if (colon != std::string::npos) msg = msg.substr(colon + 2);
    throw Error(e.kind(), context + ": " + msg);
}

}  // namespace nexp
