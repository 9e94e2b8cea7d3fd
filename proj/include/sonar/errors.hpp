#pragma once

#include <stdexcept>
#include <string>

namespace sonar {

// Invalid static configuration: bad hyperparameter, unknown preset, ...
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed runtime input: dimension mismatch, non-unit feature vector, ...
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Unreadable or inconsistent external data (CSV rows, files).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// tune_threshold exhausted its grid without finding an admissible value.
class TuningError : public std::runtime_error {
public:
    explicit TuningError(const std::string& what) : std::runtime_error(what) {}
};

// A learner left its sane operating range (baseline has no box guarantee).
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace sonar
