#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ifl {

// Common base so callers can catch everything from this library at once.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class NumericalFailure : public Error {
 public:
  using Error::Error;
};

// Raised when the projected input matrix has no usable directions left,
// i.e. the learnable subspace for a layer is exhausted.
class DegenerateSubspace : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field_path, const std::string& message)
      : Error(field_path.empty() ? message : field_path + ": " + message),
        field_path_(std::move(field_path)) {}
  const std::string& field_path() const { return field_path_; }

 private:
  std::string field_path_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed content in an external file. Carries a location: (row, col) for
// text inputs, a byte offset for binary ones.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t row, std::size_t col)
      : Error(message + " (row " + std::to_string(row) + ", col " +
              std::to_string(col) + ")"),
        row_(row),
        col_(col) {}
  ParseError(const std::string& message, std::size_t byte_offset)
      : Error(message + " (byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  std::size_t row() const { return row_; }
  std::size_t col() const { return col_; }
  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t row_ = 0;
  std::size_t col_ = 0;
  std::size_t byte_offset_ = 0;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace ifl
