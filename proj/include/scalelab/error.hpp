#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scalelab {

enum class ErrorKind {
  InvalidInput,
  Config,
  Oversubscription,
  NumaMismatch,
  PeerUnreachable,
  ShapeMismatch,
  EmptyInput,
  NonPositiveTime,
  EmptyField,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::Oversubscription: return "Oversubscription";
    case ErrorKind::NumaMismatch: return "NumaMismatch";
    case ErrorKind::PeerUnreachable: return "PeerUnreachable";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::NonPositiveTime: return "NonPositiveTime";
    case ErrorKind::EmptyField: return "EmptyField";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised by collectives when a neighbour cannot be reached or vanishes
// mid-collective. Carries the rank that failed.
class PeerUnreachable : public Error {
 public:
  PeerUnreachable(int peer, const std::string& what)
      : Error(ErrorKind::PeerUnreachable, "rank " + std::to_string(peer) + ": " + what),
        peer_(peer) {}

  int peer() const noexcept { return peer_; }

 private:
  int peer_;
};

}  // namespace scalelab
