#pragma once

#include <stdexcept>
#include <string>

namespace kbdm {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between operands.
struct DimensionError : Error {
    using Error::Error;
};

// Index outside its valid range.
struct IndexError : Error {
    using Error::Error;
};

// Bad configuration: invalid values, unknown keys, inconsistent flags. CLI exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// Unreadable or malformed input data. CLI exit code 3.
struct DataError : Error {
    using Error::Error;
};

// Non-finite value where a finite one is required. CLI exit code 4.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace kbdm
