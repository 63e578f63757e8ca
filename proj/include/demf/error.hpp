#pragma once

#include <stdexcept>
#include <string>

namespace demf {

// Base for every failure the library reports. Callers that only need to
// distinguish "library error" from everything else can catch this.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

// Input is well-formed but statistically unusable (e.g. a single class).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

// Loss became non-finite.
class DivergenceError : public TrainingError {
public:
    using TrainingError::TrainingError;
};

class StateError : public Error {
public:
    using Error::Error;
};

class CapabilityError : public Error {
public:
    using Error::Error;
};

// A test-split slice reached a training-only stage.
class ContaminationError : public Error {
public:
    using Error::Error;
};

class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

} // namespace demf
