#pragma once

#include <stdexcept>
#include <string>

namespace bvr {

// Every failure raised by the library carries a short machine-readable
// reason ("shape-mismatch", "missing-checkpoint", ...) alongside the
// human-readable message. The CLI prints the reason verbatim.
class Error : public std::runtime_error {
 public:
  Error(std::string reason, const std::string& message)
      : std::runtime_error(message), reason_(std::move(reason)) {}

  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string reason_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("shape-mismatch", message) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message) : Error("invalid-argument", message) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& message) : Error("format-error", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io-error", message) {}
};

}  // namespace bvr
