#pragma once

#include <stdexcept>
#include <string>

namespace funfreeze {

// User-facing configuration / usage problems. The CLI maps these to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input files (datasets, checkpoints, configs). Subtype of ConfigError
// so the CLI treats bad inputs as usage errors.
struct ParseError : ConfigError {
    using ConfigError::ConfigError;
};

// A run that started but cannot continue (NaN loss, probe failure). Exit code 1.
struct RunError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace funfreeze
