#pragma once

#include <stdexcept>
#include <string>

namespace cts {

// Invalid caller input: bad shapes, bad indices, malformed files, unknown labels.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// A numeric operation was asked to leave its domain (log of a non-positive value, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Something went wrong while running (non-finite loss, I/O failure).
class RuntimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cts
