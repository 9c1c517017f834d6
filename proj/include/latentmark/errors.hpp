#pragma once

#include <stdexcept>
#include <string>

namespace latentmark {

// One exception family per failure category so callers can catch what they
// can actually handle. Everything derives from Error.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct ParamError : Error {
    explicit ParamError(const std::string& msg) : Error(msg) {}
};

struct ScheduleError : ParamError {
    explicit ScheduleError(const std::string& msg) : ParamError(msg) {}
};

struct ConditionError : ParamError {
    explicit ConditionError(const std::string& msg) : ParamError(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// numerically impossible request, e.g. watermark variance above the latent variance
struct DegenerateError : Error {
    explicit DegenerateError(const std::string& msg) : Error(msg) {}
};

struct DivergenceError : Error {
    explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

struct ReportError : Error {
    explicit ReportError(const std::string& msg) : Error(msg) {}
};

}  // namespace latentmark
