#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace plslam {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A geometric quantity is undefined for the given input (coincident points,
/// line at infinity, landmark behind the camera, ...).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// A factor graph violates one of its structural invariants.
class InvalidGraphError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or stream. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace plslam
