#pragma once

#include <stdexcept>
#include <string>

namespace magskin {

// Bad configuration or usage: unknown keys, out-of-range values,
// incompatible options, missing files. Maps to process exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed persisted artifact: dataset CSV, checkpoint, replay input.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A field query fell inside the dipole validity radius.
class SingularityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor or layer shape contract violation.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace magskin
