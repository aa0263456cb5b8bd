#pragma once

#include <stdexcept>
#include <string>

namespace dmm {

/// Misuse of a module contract: shape mismatch, bad config, missing input.
struct ContractViolation : std::invalid_argument {
    explicit ContractViolation(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Numerical failure: NaN/Inf produced, covariance lost positive definiteness.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed file: dataset, config, or checkpoint schema problems.
struct SchemaError : std::runtime_error {
    explicit SchemaError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Unsupported format_version in a serialized document.
struct VersionError : SchemaError {
    explicit VersionError(const std::string& msg) : SchemaError(msg) {}
};

}  // namespace dmm
