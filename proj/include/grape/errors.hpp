#pragma once

#include <stdexcept>
#include <string>

namespace grape {

// Shape/dimension mismatches in tensor ops.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Out-of-range ids (embedding lookups, user/item indices).
struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Misuse of the autodiff tape (non-scalar loss, double backward, detached values).
struct TapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finiteness is an invariant.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Corpus ingestion problems (malformed lines, missing indicator rows, ...).
struct IngestError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Run-configuration problems (schema violations, bad overrides, bad grids).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training-invariant violations (missing gradients, NaN loss, bad pairs).
struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace grape
