#pragma once

#include <stdexcept>
#include <string>

namespace bbox {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Mismatched image, tensor or pattern shapes.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// An operation was called in a state that does not permit it.
class StateError : public Error {
public:
  using Error::Error;
};

/// Invalid configuration values (schedules, plans, manifests).
class ValidationError : public Error {
public:
  ValidationError(const std::string &field, const std::string &reason)
      : Error("invalid '" + field + "': " + reason), field_(field) {}

  [[nodiscard]] const std::string &field() const { return field_; }

private:
  std::string field_;
};

/// Dataset or configuration the toolkit does not handle.
class UnsupportedError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

} // namespace bbox
