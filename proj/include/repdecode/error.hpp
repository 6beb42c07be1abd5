#pragma once

#include <stdexcept>
#include <string>

namespace repdecode {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind {
  usage = 1,
  data = 2,
  numerical = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

// Raised by the binary/CSV readers. `code` lets callers distinguish the
// failure without parsing the message.
enum class FormatErrc {
  io,
  bad_magic,
  bad_version,
  truncated,
  non_finite,
  malformed,
};

class FormatError : public DataError {
 public:
  FormatError(FormatErrc code, const std::string& what) : DataError(what), code_(code) {}
  FormatErrc code() const noexcept { return code_; }

 private:
  FormatErrc code_;
};

}  // namespace repdecode
