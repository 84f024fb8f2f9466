#pragma once

#include <stdexcept>
#include <string>

namespace mfmasc {

// Violated precondition or shape contract of an operation.
class ContractViolation : public std::runtime_error {
  public:
    explicit ContractViolation(const std::string& msg)
        : std::runtime_error("error[contract]: " + msg) {}
};

// Malformed external data (WAV header, model file, cache file).
class FormatError : public std::runtime_error {
  public:
    explicit FormatError(const std::string& msg)
        : std::runtime_error("error[format]: " + msg) {}
};

// Invalid configuration (bad key, bad value, inconsistent model config).
class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string& msg)
        : std::runtime_error("error[config]: " + msg) {}
};

// Filesystem / IO failure.
class IoError : public std::runtime_error {
  public:
    explicit IoError(const std::string& msg)
        : std::runtime_error("error[io]: " + msg) {}
};

}  // namespace mfmasc
