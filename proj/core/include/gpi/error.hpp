#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gpi {

/// Category of a failure. Every category maps to its own process exit code
/// in the command-line tool.
enum class ErrorKind {
  Format,          // malformed file header or payload
  Join,            // id mismatch or duplicate between representations and labels
  Validation,      // contract violation on an input value
  DegenerateData,  // single treatment arm, empty complier set, ...
  Shape,           // dimension mismatch
  Domain,          // probability outside (0,1) and similar
  Convergence,     // iterative solver hit its cap
  InsufficientData,
  WeakInstrument,
  Generation,      // synthetic data generator could not satisfy its gate
  Io,
  Config,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Exit code used by the CLI for a given error kind (always >= 2).
int exit_code(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Thrown by fit_propensity when the Newton solver does not reach tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, double gradient_norm)
      : Error(ErrorKind::Convergence, message), gradient_norm_(gradient_norm) {}

  double gradient_norm() const noexcept { return gradient_norm_; }

 private:
  double gradient_norm_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

/// Rethrows `e` with `context: ` prepended to its message, preserving kind.
[[noreturn]] void rethrow_with_context(const Error& e, std::string_view context);

}  // namespace gpi
