#pragma once

#include <stdexcept>
#include <string>

namespace psagan {

// Error taxonomy. The CLI maps these to exit codes, so keep the split stable:
// ConfigError -> 2, ArtifactError -> 3, DependencyError -> 4, everything else -> 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ContractError : Error {
    using Error::Error;
};

struct IndexError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

// Missing input artifact (checkpoint, sample file, scenario file).
struct ArtifactError : Error {
    using Error::Error;
};

// A required earlier pipeline step has not been run.
struct DependencyError : Error {
    using Error::Error;
};

}  // namespace psagan
