#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace propfault {

// Base of every error raised by the library. error_class() is a short stable
// token that the command-line front end prints so failures are machine-parsable.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* error_class() const noexcept { return "error"; }
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
  const char* error_class() const noexcept override { return "invalid-argument"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* error_class() const noexcept override { return "io"; }
};

class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t row, const std::string& what)
      : Error(path + ":" + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }
  const char* error_class() const noexcept override { return "parse"; }

 private:
  std::size_t row_;
};

// Non-finite state or a gimbal-lock excursion during integration.
class SimulationFault : public Error {
 public:
  using Error::Error;
  const char* error_class() const noexcept override { return "simulation"; }
};

// Loss became NaN/inf during training.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
  const char* error_class() const noexcept override { return "training"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* error_class() const noexcept override { return "config"; }
};

}  // namespace propfault
