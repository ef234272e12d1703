#pragma once

#include <stdexcept>
#include <string>

namespace equine {

/// Failure classes. The numeric values double as CLI exit codes.
enum class ErrorKind : int {
  usage = 2,
  data = 3,
  no_roi = 4,
  model = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message) : Error(ErrorKind::usage, message) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& message) : Error(ErrorKind::data, message) {}
};

class NoRoiError : public Error {
 public:
  explicit NoRoiError(const std::string& message = "no ROI found")
      : Error(ErrorKind::no_roi, message) {}
};

class ModelError : public Error {
 public:
  explicit ModelError(const std::string& message) : Error(ErrorKind::model, message) {}
};

inline int exit_code(ErrorKind kind) noexcept { return static_cast<int>(kind); }

}  // namespace equine
