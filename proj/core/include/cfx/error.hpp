#pragma once

#include <stdexcept>
#include <string>

namespace cfx {

/// Bad input: malformed arguments, files, shapes, or violated preconditions.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A well-formed run that failed while executing (divergence, I/O).
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cfx
