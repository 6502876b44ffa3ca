#pragma once

#include <stdexcept>
#include <string>

namespace insnet {

// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes or non-scalar where a scalar is required.
struct ShapeError : Error {
    using Error::Error;
};

// Out-of-range indices (token ids, slot indices, offsets).
struct IndexError : Error {
    using Error::Error;
};

// Invalid argument values (probabilities, permutations, config fields).
struct ValueError : Error {
    using Error::Error;
};

// Operation not legal in the current state (double backward, dead decode).
struct StateError : Error {
    using Error::Error;
};

// File and serialization failures; message names the first bad field.
struct IoError : Error {
    using Error::Error;
};

}  // namespace insnet
