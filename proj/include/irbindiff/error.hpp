#pragma once

#include <stdexcept>
#include <string>

namespace irbindiff {

// Base for every error the toolkit raises on purpose. The CLI maps
// subclasses of InputError to exit code 1 and everything else to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ParseError : public InputError {
 public:
  ParseError(std::size_t line_no, const std::string& what)
      : InputError("line " + std::to_string(line_no) + ": " + what), line_no_(line_no) {}
  std::size_t line_no() const { return line_no_; }

 private:
  std::size_t line_no_;
};

class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

class StageError : public InputError {
 public:
  using InputError::InputError;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class GraphError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace irbindiff
