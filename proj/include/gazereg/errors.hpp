#pragma once

#include <stdexcept>
#include <string>

namespace gazereg {

// Error taxonomy. The CLI maps the four coarse categories to distinct exit
// codes (config=2, data=3, divergence=4, io=5); everything else exits 1.

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input file; message carries the offending line number.
struct ParseError : DataError {
    using DataError::DataError;
};

// A mapped/required column or column set is missing or unrecognized.
struct SchemaError : DataError {
    using DataError::DataError;
};

// Duplicate join keys on the label side.
struct AmbiguityError : DataError {
    using DataError::DataError;
};

// Input too short for the requested operation (SG window, 50 s policy).
struct LengthError : DataError {
    using DataError::DataError;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad version tag, truncated file, or name/shape mismatch on load.
struct CheckpointError : IoError {
    using IoError::IoError;
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ArgumentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Batch statistics undefined (fewer than two values per channel).
struct StatisticsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace gazereg
