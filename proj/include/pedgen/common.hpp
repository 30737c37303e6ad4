#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace pedgen {

// Error taxonomy shared by the library and the CLI. The CLI maps each type
// onto a distinct process exit code.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw DataError(msg);
}

inline void require_shape(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

inline void require_finite(double v, const std::string& what) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in " + what);
}

constexpr double kPi = 3.14159265358979323846;

}  // namespace pedgen
