#pragma once

#include <stdexcept>
#include <string>

namespace jmfuse {

// Error taxonomy, mapped to process exit codes by the CLI:
//   ValidationError (and subclasses) -> 1
//   IoError / FormatError            -> 2
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
struct DimensionError : ValidationError {
    using ValidationError::ValidationError;
};

// Non-finite values where finite input is required.
struct NumericError : ValidationError {
    using ValidationError::ValidationError;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or unrecognized file content.
struct FormatError : IoError {
    using IoError::IoError;
};

// Recognized format but a variant this tool does not handle.
struct UnsupportedError : FormatError {
    using FormatError::FormatError;
};

} // namespace jmfuse
