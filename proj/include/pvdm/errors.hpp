#pragma once

#include <stdexcept>
#include <string>

namespace pvdm {

/// Invalid or inconsistent configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Checkpoint missing, corrupt, or incompatible with the requested model (exit code 3).
struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Unusable input data (exit code 4).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace pvdm
