#pragma once

#include <stdexcept>
#include <string>

namespace tactus {

// Shape or rank violation in a tensor primitive. Message names the
// primitive and the offending shapes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf produced by a primitive, or a numeric argument outside its domain.
// Message identifies the producing node.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed, truncated, or version-mismatched file.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration or command usage.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace tactus
