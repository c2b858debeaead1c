#pragma once

#include <stdexcept>
#include <string>

namespace nlfk {

// Exit-code families used by the CLI: input/config problems are the
// caller's fault (2), numeric and solver failures are ours (3).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class ConfigError : public InputError {
public:
    ConfigError(const std::string& what, int line = -1, std::string field = {})
        : InputError(format_message(what, line, field)), line_(line), field_(std::move(field)) {}

    int line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

private:
    static std::string format_message(const std::string& what, int line, const std::string& field) {
        std::string msg = "config error";
        if (line >= 0) msg += " at line " + std::to_string(line);
        if (!field.empty()) msg += " in field '" + field + "'";
        return msg + ": " + what;
    }

    int line_;
    std::string field_;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class SimulationError : public NumericError {
public:
    SimulationError(const std::string& what, std::size_t path, std::size_t step)
        : NumericError(what + " (path " + std::to_string(path) + ", step " + std::to_string(step) + ")"),
          path_(path), step_(step) {}

    std::size_t path() const noexcept { return path_; }
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t path_;
    std::size_t step_;
};

class SolverError : public Error {
public:
    using Error::Error;
};

/// Raised when an explicit finite-difference step would lose monotonicity.
class CflError : public SolverError {
public:
    CflError(const std::string& what, double admissible_dt)
        : SolverError(what), admissible_dt_(admissible_dt) {}

    double admissible_dt() const noexcept { return admissible_dt_; }

private:
    double admissible_dt_;
};

}  // namespace nlfk
