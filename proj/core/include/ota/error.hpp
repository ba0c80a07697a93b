#pragma once

#include <stdexcept>
#include <string>

namespace ota {

// Base of every error raised by the library. The CLI maps the subclasses onto
// process exit codes (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration, arguments or tensor shapes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class ArchitectureMismatch : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// NaN/Inf produced by an operation, or a training loss that diverged.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Corrupt file, bad magic, unsupported version or schema.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

// 0 success, 1 config error, 2 numerical failure, 3 I/O error.
int exit_code(const std::exception& e) noexcept;

}  // namespace ota
