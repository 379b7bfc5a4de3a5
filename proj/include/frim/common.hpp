#pragma once

#include <stdexcept>
#include <string>

namespace frim {

inline constexpr const char* kVersion = "0.1.0";

enum class Family { gaussian, binomial };

inline std::string family_name(Family f) {
    return f == Family::gaussian ? "gaussian" : "binomial";
}

// Base class for all errors raised by the library.  The CLI maps the
// subclasses onto distinct process exit codes, so every throw site should
// pick the most specific type that applies.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data or an inconsistent configuration.
class InputError : public Error {
public:
    explicit InputError(const std::string& msg) : Error(msg) {}
};

// An iteration budget was exhausted or a sampler chain failed outright.
class ConvergenceError : public Error {
public:
    explicit ConvergenceError(const std::string& msg) : Error(msg) {}
};

}  // namespace frim
