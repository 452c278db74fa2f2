#pragma once

#include <stdexcept>
#include <string>

namespace red {

// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. `record()` names the offending record, e.g.
// "header", "transition 17", "trajectory bound 3".
class ParseError : public Error {
 public:
  ParseError(std::string record, const std::string& what)
      : Error(record + ": " + what), record_(std::move(record)) {}

  const std::string& record() const { return record_; }

 private:
  std::string record_;
};

// Invalid configuration value or unknown configuration key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A loss became non-finite during training.
class NanAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace red
