#pragma once

#include <stdexcept>
#include <string>

namespace ctxreuse {

// Base of every error raised by the library. `code()` is a stable
// machine-readable tag used by the gateway's structured error replies.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& message)
      : Error("precondition", message) {}
};

class InvalidPathError : public Error {
 public:
  explicit InvalidPathError(const std::string& message)
      : Error("invalid_path", message) {}
};

class UnknownSessionError : public Error {
 public:
  explicit UnknownSessionError(const std::string& session_id)
      : Error("unknown_session", "unknown session '" + session_id + "'") {}
};

class OverCapacityError : public Error {
 public:
  explicit OverCapacityError(const std::string& message)
      : Error("over_capacity", message) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& message) : Error("parse", message) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message)
      : Error("validation", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

}  // namespace ctxreuse
