#pragma once

#include <stdexcept>
#include <string>

namespace styleadapt {

// Every thrown error carries a stable slug-style code (printed as
// "error[<code>]: <message>") and the process exit code the CLI maps it to:
//   2 config/input error, 3 stage-order error, 4 runtime numerical or
//   contract error.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message, int exit_code)
        : std::runtime_error(message), code_(std::move(code)), exit_code_(exit_code) {}

    const std::string& code() const noexcept { return code_; }
    int exit_code() const noexcept { return exit_code_; }

private:
    std::string code_;
    int exit_code_;
};

// Bad configuration values, malformed plan strings, schema violations.
class ConfigError : public Error {
public:
    ConfigError(std::string code, const std::string& message)
        : Error(std::move(code), message, 2) {}
};

// Malformed or inconsistent data files (corpus lines, labels, checkpoints).
class DataError : public Error {
public:
    DataError(std::string code, const std::string& message)
        : Error(std::move(code), message, 2) {}
};

// A pipeline stage was invoked before the artifacts it needs exist.
class StageOrderError : public Error {
public:
    StageOrderError(std::string code, const std::string& message)
        : Error(std::move(code), message, 3) {}
};

// NaN/Inf propagation, domain violations (e.g. non-positive perplexity).
class NumericError : public Error {
public:
    NumericError(std::string code, const std::string& message)
        : Error(std::move(code), message, 4) {}
};

// API misuse: shape mismatches, routing/wiring violations, calls that break
// a module contract (e.g. reconstruction loss on a non-matching stream).
class ContractError : public Error {
public:
    ContractError(std::string code, const std::string& message)
        : Error(std::move(code), message, 4) {}
};

}  // namespace styleadapt
