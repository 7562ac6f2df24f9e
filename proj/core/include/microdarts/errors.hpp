#pragma once

#include <stdexcept>
#include <string>

namespace microdarts {

// Shape/arity/graph-structure violations.
class StructuralError : public std::runtime_error {
public:
    explicit StructuralError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf produced by a completed operation. Message names the offending node.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// API called out of order (backward before forward, grad before backward, ...).
class StateError : public std::runtime_error {
public:
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed external input: files, configs, labels out of range.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Config file problems (unknown key, unparsable value). Distinct from InputError
// so the CLI can map it to the usage exit code.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// An enumeration or resource cap was exceeded; message carries the count.
class CapExceeded : public std::runtime_error {
public:
    CapExceeded(const std::string& msg, long long count)
        : std::runtime_error(msg), count_(count) {}
    long long count() const { return count_; }

private:
    long long count_;
};

// A vector with (near-)zero norm where a direction was required.
class DegenerateError : public std::runtime_error {
public:
    explicit DegenerateError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace microdarts
