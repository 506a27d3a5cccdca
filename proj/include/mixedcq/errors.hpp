#pragma once

#include <stdexcept>
#include <string>

namespace mixedcq {

// Error taxonomy mirrored by the C API status codes.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed expression text; `offset` is the byte position of the problem.
struct ParseError : Error {
  std::size_t offset;
  ParseError(const std::string& msg, std::size_t off)
      : Error(msg + " (at byte " + std::to_string(off) + ")"), offset(off) {}
};

// Arithmetic outside the function's domain (log of nonpositive, division by zero).
struct DomainError : Error {
  using Error::Error;
};

// Schema or invariant violation in problem/trajectory data; `path` is the field.
struct ValidationError : Error {
  std::string path;
  ValidationError(const std::string& path_, const std::string& msg)
      : Error(path_ + ": " + msg), path(path_) {}
};

// Numerical procedure failed (solver breakdown, infeasible point, size limit).
struct NumericError : Error {
  using Error::Error;
};

// File could not be opened or written.
struct IoError : Error {
  using Error::Error;
};

}  // namespace mixedcq
