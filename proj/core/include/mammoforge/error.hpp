#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mammoforge {

enum class ErrorKind {
  validation,  // inputs or configuration violate a contract
  format,      // a file could not be decoded
  state,       // operation not allowed in the current case state
  io,          // filesystem failure
  processing,  // an algorithm could not produce a result
  backend,     // external backend failed or timed out
  protocol,    // external backend violated the exchange protocol
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// True for errors caused by bad input or state, false for failures while processing.
  bool is_validation() const noexcept;

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& what) : Error(ErrorKind::state, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class ProcessingError : public Error {
 public:
  explicit ProcessingError(const std::string& what) : Error(ErrorKind::processing, what) {}
};

/// Decoding failure; `offset` is the byte position where decoding stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset);

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Raised when a pyramid level lacks enough overlapping samples.
class RegistrationError : public Error {
 public:
  RegistrationError(const std::string& what, int level);

  int level() const noexcept { return level_; }

 private:
  int level_;
};

/// External backend failure. The work directory is kept for inspection.
class BackendError : public Error {
 public:
  BackendError(ErrorKind kind, const std::string& what, std::filesystem::path workdir,
               bool timed_out = false);

  const std::filesystem::path& workdir() const noexcept { return workdir_; }
  bool timed_out() const noexcept { return timed_out_; }

 private:
  std::filesystem::path workdir_;
  bool timed_out_;
};

}  // namespace mammoforge
