// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace effortvae {

// Root of every library error. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the row (text formats) or byte offset (binary).
class ParseError : public Error {
public:
    ParseError(const std::string& what, long location = -1)
        : Error(location >= 0 ? what + " (at " + std::to_string(location) + ")" : what),
          location_(location) {}
    long location() const noexcept { return location_; }

private:
    long location_;
};

class SchemaError : public Error {
    using Error::Error;
};

class ConfigError : public Error {
    using Error::Error;
};

class PreconditionError : public Error {
    using Error::Error;
};

class InsufficientDataError : public Error {
    using Error::Error;
};

class DegenerateExtentError : public Error {
    using Error::Error;
};

class ConflictError : public Error {
    using Error::Error;
};

/// A non-finite value appeared. `op()` names the operation that produced it.
class NumericError : public Error {
public:
    explicit NumericError(std::string op)
        : Error("non-finite value produced by '" + op + "'"), op_(std::move(op)) {}
    const std::string& op() const noexcept { return op_; }

private:
    std::string op_;
};

}  // namespace effortvae
