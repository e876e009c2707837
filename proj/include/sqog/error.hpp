#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sqog {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated a precondition (bad shape, out-of-range argument, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed config or data file. Carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Iterative solver ran out of iterations.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// A numeric quantity went non-finite during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace sqog
