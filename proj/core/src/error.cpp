#include "gpi/error.hpp"

namespace gpi {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Format: return "format error";
    case ErrorKind::Join: return "join error";
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::DegenerateData: return "degenerate-data error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Convergence: return "convergence error";
    case ErrorKind::InsufficientData: return "insufficient-data error";
    case ErrorKind::WeakInstrument: return "weak-instrument error";
    case ErrorKind::Generation: return "generation error";
    case ErrorKind::Io: return "I/O error";
    case ErrorKind::Config: return "config error";
  }
  return "error";
}

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Io: return 3;
    case ErrorKind::Format: return 4;
    case ErrorKind::Join: return 5;
    case ErrorKind::Validation: return 6;
    case ErrorKind::DegenerateData: return 7;
    case ErrorKind::Shape: return 8;
    case ErrorKind::Domain: return 9;
    case ErrorKind::Convergence: return 10;
    case ErrorKind::InsufficientData: return 11;
    case ErrorKind::WeakInstrument: return 12;
    case ErrorKind::Generation: return 13;
  }
  return 1;
}

void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

void rethrow_with_context(const Error& e, std::string_view context) {
  std::string message(context);
  message += ": ";
  message += e.what();
  if (const auto* ce = dynamic_cast<const ConvergenceError*>(&e)) {
    throw ConvergenceError(message, ce->gradient_norm());
  }
  throw Error(e.kind(), message);
}

}  // namespace gpi
