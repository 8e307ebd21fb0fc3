#pragma once

#include <stdexcept>
#include <string>

namespace sftik {

// Shape/dimension mismatch between tensors or between a tensor and a config.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid or inconsistent configuration values.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A call violated an operation's precondition (empty input, wrong rank, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// A tensor was used with a tape it was not produced on.
struct LineageError : std::runtime_error {
    explicit LineageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values detected while finite checks are enabled, or numeric
// failure such as a NaN training loss.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk data (container header, index records, manifests).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failure (missing file, refusing to overwrite, short write).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sftik
