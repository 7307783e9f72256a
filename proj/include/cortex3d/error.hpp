#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cortex3d {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not satisfy an operation's preconditions.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A precondition other than shape was violated (bad extent, out-of-range index, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// A binary container (VOL1, ACNN1) or text file could not be decoded.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    explicit FormatError(const std::string& what) : Error(what) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_ = 0;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// The run configuration is malformed or references unusable resources.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace cortex3d
