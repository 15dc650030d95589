#pragma once

#include <stdexcept>
#include <string>

namespace lidarseg {

/// Invalid sizes, shapes or configuration values.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller violated a precondition (index out of range, wrong arity, ...).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed, truncated or incompatible file contents.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised from the optimization loop (missing gradients, NaN inputs).
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace lidarseg
