#pragma once

#include <stdexcept>
#include <string>

namespace dim {

// Base of every error the library throws. Each subclass maps onto one CLI
// exit code (see tools/dim_cli.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid arguments or violated preconditions.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Malformed configuration document.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A required artifact (dataset, checkpoint, generated clip) is absent.
class MissingPrerequisite : public Error {
public:
    using Error::Error;
};

// Training or inference produced a non-finite value.
class DivergenceError : public Error {
public:
    using Error::Error;
};

// Structural error in an on-disk tensor file.
class TensorFileError : public Error {
public:
    enum class Kind { BadMagic, VersionMismatch, Truncated, UnknownDtype, Io };

    TensorFileError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace dim
