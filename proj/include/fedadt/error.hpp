#pragma once

#include <stdexcept>
#include <string>

namespace fedadt {

// Caller handed in data with the wrong shape or range.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A scalar parameter is outside its legal domain (T <= 0, alpha > 1, ...).
class InvalidParameter : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Run configuration is inconsistent or references missing files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Internal consistency check failed. Indicates a scheduler or strategy bug.
class InvariantViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Synchronous round contract breached (missing or duplicate update).
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Dirichlet draw left a client without samples; retry with another seed.
class InfeasiblePartition : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::string file, const std::string& what)
      : std::runtime_error(file + ": " + what), file_(std::move(file)) {}
  const std::string& file() const noexcept { return file_; }

 private:
  std::string file_;
};

class IdxError : public ParseError {
 public:
  enum class Kind { bad_magic, truncated, count_mismatch };

  IdxError(Kind kind, std::string file, const std::string& what)
      : ParseError(std::move(file), what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace fedadt
