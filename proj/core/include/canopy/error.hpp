#pragma once

#include <stdexcept>
#include <string>

namespace canopy {

enum class ErrorKind {
  Validation,   // malformed input, broken invariants
  Io,           // files, sockets
  Numerical,    // NaN/degenerate arithmetic
  Unsupported,  // unknown format, dtype or layout
};

/// Library-wide exception. The kind maps onto the CLI exit code.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

/// 0 success, 2 validation, 3 I/O, 4 numerical.
int exit_code(ErrorKind kind) noexcept;

}  // namespace canopy
