#pragma once

#include <stdexcept>
#include <string>

namespace cea {

// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A documented precondition was not met by the caller.
class ContractViolation : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class SingularCovariance : public Error {
public:
    using Error::Error;
};

class DatasetError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class TrainingDiverged : public Error {
public:
    TrainingDiverged(int epoch, const std::string& what)
        : Error(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

class UnfittedState : public Error {
public:
    using Error::Error;
};

class CalibrationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

// A failure inside the experiment grid, tagged with where it happened. The
// original exception is attached via std::throw_with_nested.
class GridError : public Error {
public:
    GridError(std::string context, const std::string& what)
        : Error(context + ": " + what), context_(std::move(context)) {}
    const std::string& context() const noexcept { return context_; }

private:
    std::string context_;
};

}  // namespace cea
