#pragma once

#include <stdexcept>
#include <string>

namespace propfuse {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violates a documented contract (bad manifest, bad config, bad spec).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// File exists but its content does not follow the expected layout.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// File payload is shorter than its header announces.
class LengthError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A propagation offset cannot be served because a flow in its chain is absent.
class UnavailableOffsetError : public ValidationError {
 public:
  UnavailableOffsetError(int from, int to)
      : ValidationError("missing flow (" + std::to_string(from) + "," +
                        std::to_string(to) + ")"),
        from_(from),
        to_(to) {}

  int from() const noexcept { return from_; }
  int to() const noexcept { return to_; }

 private:
  int from_;
  int to_;
};

// Filesystem failure; message carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace propfuse
