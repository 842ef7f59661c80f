#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace scalpel {

using i64 = std::int64_t;
using u64 = std::uint64_t;

// Error taxonomy. Every category maps to one CLI exit code (see cli.hpp):
// config 2, data/input 3, training 4, anything else 5.
struct ScalpelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dimension disagreements between tensors.
struct ShapeError : ScalpelError {
    using ScalpelError::ScalpelError;
};

// Non-finite values where finite ones are required.
struct NumericError : ScalpelError {
    using ScalpelError::ScalpelError;
};

// API misuse (e.g. backward on a non-scalar loss).
struct ContractError : ScalpelError {
    using ScalpelError::ScalpelError;
};

// Bad caller-supplied values: out-of-range ids, empty prompts, degenerate inputs.
struct InputError : ScalpelError {
    using ScalpelError::ScalpelError;
};

struct ConfigError : ScalpelError {
    using ScalpelError::ScalpelError;
};

// Unreadable or malformed data files (JSONL parse failures and the like).
struct DataError : ScalpelError {
    using ScalpelError::ScalpelError;
};

// Checkpoint container with wrong magic/version.
struct FormatError : DataError {
    using DataError::DataError;
};

// Checkpoint container whose manifest disagrees with its payload.
struct CorruptionError : DataError {
    using DataError::DataError;
};

// Training run that failed to meet its contract (mastery, finite losses).
struct TrainError : ScalpelError {
    using ScalpelError::ScalpelError;
};

struct InternalError : ScalpelError {
    using ScalpelError::ScalpelError;
};

#define SCALPEL_CHECK_INTERNAL(cond, msg)                        \
    do {                                                         \
        if (!(cond)) throw ::scalpel::InternalError(msg);        \
    } while (0)

}  // namespace scalpel
