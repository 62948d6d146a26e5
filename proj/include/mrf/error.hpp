#pragma once

#include <stdexcept>
#include <string>

namespace mrf {

/// Base of every exception thrown by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated file. The message names the failing field.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure (cannot open, short write).
class IoError : public Error {
public:
    using Error::Error;
};

/// Tensor shape mismatch. The message names the offending graph node.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Non-finite values inside a simulation state.
class InvalidStateError : public Error {
public:
    using Error::Error;
};

/// Probe signal with (numerically) zero norm.
class DegenerateSignalError : public Error {
public:
    using Error::Error;
};

/// Bad or unknown run-configuration entry.
class ConfigError : public Error {
public:
    using Error::Error;
};

class TrainingDivergedError : public Error {
public:
    TrainingDivergedError(std::size_t epoch, const std::string& what)
        : Error("training diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

}  // namespace mrf
