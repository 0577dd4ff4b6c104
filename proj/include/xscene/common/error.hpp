#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xscene {

enum class ErrorKind {
  config,       // invalid configuration or layout
  input,        // malformed or inconsistent input data
  usage,        // API misuse (e.g. backward before forward)
  unreachable,  // a requested target cannot be met within tolerance
  divergence,   // optimization produced non-finite values
  stale,        // upstream artifacts changed since their manifest was written
  missing,      // required upstream artifact or data is absent
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::input: return "input";
    case ErrorKind::usage: return "usage";
    case ErrorKind::unreachable: return "unreachable";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::stale: return "stale";
    case ErrorKind::missing: return "missing";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace xscene
