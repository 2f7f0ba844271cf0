#ifndef ATTNFUSE_ERRORS_HPP
#define ATTNFUSE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace attnfuse {

// Bad or missing configuration (unknown keys, invalid values, absent files).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken dataset / tensor files (bad magic, truncation, inconsistent counts).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where the training contract requires finiteness.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace attnfuse

#endif
