#pragma once

#include <stdexcept>
#include <string>

namespace nlmot {

enum class ErrorKind {
  invalid_input,
  invalid_config,
  degenerate_box,
  shape_mismatch,
  numeric,
  format,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::invalid_config: return "invalid-config";
    case ErrorKind::degenerate_box: return "degenerate-box";
    case ErrorKind::shape_mismatch: return "shape-mismatch";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::format: return "format";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

/// Library-wide exception. `kind()` is the machine-readable category the CLI
/// prints on failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  const char* category() const noexcept { return to_string(kind_); }

 private:
  ErrorKind kind_;
};

}  // namespace nlmot
