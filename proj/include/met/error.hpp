#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace met {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (mesh, label or sample files).
class DataError : public Error {
public:
    using Error::Error;
};

/// Parse failure with the offending line number (1-based).
class ParseError : public DataError {
public:
    ParseError(const std::string& what, std::size_t line)
        : DataError(what + ", line " + std::to_string(line)), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Invalid or incompatible configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, solver failures.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace met
