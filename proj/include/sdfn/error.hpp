#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sdfn {

/// Base of every error raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

/// Malformed input file. `offset` is the byte position where parsing stopped.
struct ParseError : Error {
    ParseError(const std::string& what, std::size_t byte_offset)
        : Error(what + " (at byte offset " + std::to_string(byte_offset) + ")"), offset(byte_offset) {}
    std::size_t offset;
};

/// A pipeline stage was invoked before the stage it depends on.
struct PrerequisiteError : Error {
    PrerequisiteError(const std::string& stage_name, const std::string& detail)
        : Error("missing prerequisite: run '" + stage_name + "' first (" + detail + ")"), stage(stage_name) {}
    std::string stage;
};

/// An internal contract (freeze, determinism, ...) was violated at runtime.
struct AssertionFailure : Error {
    using Error::Error;
};

}  // namespace sdfn
