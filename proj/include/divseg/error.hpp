#pragma once

#include <stdexcept>
#include <string>

namespace divseg {

// Failure categories; the CLI maps each to a distinct process exit code.
enum class ErrorKind { kConfig, kData, kNumeric, kIo };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorKind::kConfig, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

// Malformed tensor file (bad magic, truncation, unsupported dtype).
class FormatError : public DataError {
 public:
  explicit FormatError(const std::string& what) : DataError(what) {}
};

// Dimension or depth mismatch between operands.
class ShapeError : public DataError {
 public:
  explicit ShapeError(const std::string& what) : DataError(what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ErrorKind::kNumeric, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

}  // namespace divseg
