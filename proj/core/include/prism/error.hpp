#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace prism {

// Every failure raised by the library derives from Error. The CLI maps the
// subclasses onto process exit codes (see tools/prism_main.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Span, edge or risk annotations that violate the fact-graph invariants.
class AnnotationError : public Error {
 public:
  using Error::Error;
};

// Non-finite inputs or values outside the domain of a numeric routine.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A loss was requested over zero contributing positions.
class EmptyBatchError : public Error {
 public:
  using Error::Error;
};

// Token ids, shapes or windows that do not match the model.
class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed corpus record. Carries the 1-based line and, for schema
// violations, the offending field path (empty for JSON syntax errors).
class FormatError : public IoError {
 public:
  FormatError(std::size_t line, std::string field, const std::string& what)
      : IoError("line " + std::to_string(line) +
                (field.empty() ? std::string() : " field '" + field + "'") + ": " + what),
        line_(line),
        field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

// Training produced a non-finite loss or gradient.
class DivergenceError : public NumericError {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : NumericError("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace prism
