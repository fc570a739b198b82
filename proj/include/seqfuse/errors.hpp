#pragma once

#include <stdexcept>

namespace seqfuse {

// Bad options, schemas, or shapes supplied by the caller.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input files: datasets, checkpoints, config documents.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values produced during optimization.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace seqfuse
