#pragma once

#include <stdexcept>
#include <string>

namespace dtsurv {

// Input text that cannot be parsed (CSV, config files, checkpoints).
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally valid input that violates a documented constraint
// (out-of-range label, duplicate id, shape mismatch, bad ratio, ...).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Index or label off the time grid.
class RangeError : public std::runtime_error {
public:
    explicit RangeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unknown key, missing key, or unusable value in a run configuration.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A metric whose defining set of pairs/subjects is empty.
class UndefinedMetricError : public std::runtime_error {
public:
    explicit UndefinedMetricError(const std::string& msg) : std::runtime_error(msg) {}
};

// Kaplan-Meier tail hit zero at the requested time; the margin-time ratio is
// 0/0 and the caller must substitute the censor time itself.
class DegenerateTailError : public std::runtime_error {
public:
    explicit DegenerateTailError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value produced inside numeric code; message names the stage.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse detected at runtime (e.g. reusing a consumed gradient tape).
class UsageError : public std::logic_error {
public:
    explicit UsageError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace dtsurv
