#pragma once

#include <stdexcept>
#include <string>

namespace serpentflow {

// Precondition / input violations. The CLI maps these to exit code 2.
class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Numerical failures (non-finite values, solver breakdown). Exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace serpentflow
