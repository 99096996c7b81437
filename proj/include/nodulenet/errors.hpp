#pragma once

#include <stdexcept>
#include <string>

namespace nodulenet {

// Shape/dimension mismatches between tensors or layers.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Math domain violations (log of non-positive, sqrt of negative, NaN/Inf).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller broke an API precondition.
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data (annotations, volumes).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Corrupt or wrong-version serialized file.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint does not match the network it is loaded into.
struct IncompatibilityError : std::runtime_error {
    explicit IncompatibilityError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace nodulenet
