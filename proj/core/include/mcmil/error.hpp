// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mcmil {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes or dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value became NaN/Inf, or a numeric precondition (non-zero weights,
/// batch size) was violated.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid user-supplied configuration or precondition.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset or checkpoint file. Carries the 1-based line (0 when
/// not applicable) and the byte offset where parsing stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t offset)
      : Error(what + " (line " + std::to_string(line) + ", offset " +
              std::to_string(offset) + ")"),
        line_(line),
        offset_(offset) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t line_;
  std::size_t offset_;
};

/// A stored artifact does not match the data or configuration it is used with.
class MismatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace mcmil
