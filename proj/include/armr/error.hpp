#pragma once

#include <stdexcept>
#include <string>

namespace armr {

enum class ErrorKind {
    Structural,        // dimensions of m, regimes and transition disagree
    Domain,            // argument outside the function's domain
    Validation,        // model violates one of the S1-S6 style constraints
    NoStationary,      // reducible or periodic chain
    SizeGuard,         // brute-force enumeration too large
    SingularDesign,    // W^t W not invertible
    InsufficientData,  // fewer observations than parameters
    Degenerate,        // degenerate quadratic form, zero-probability step, ...
    OutOfRange,        // outside the range a bound is stated for (n < 4)
    OracleFailure,     // quadrature did not reach its tolerance
    RegimeStarvation,  // EM state received < 2 effective observations
    FitFailure,        // every EM start failed
    Io,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace armr
