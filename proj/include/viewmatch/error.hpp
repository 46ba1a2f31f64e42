#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace viewmatch {

// Error classes map one-to-one onto CLI exit codes.
enum class ErrorKind {
  validation,  // malformed configuration or flags
  data,        // malformed or non-finite payloads, unknown ids
  io,          // filesystem failures
  degenerate,  // kernel inputs with no defined value (all-zero vectors)
  internal,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::data: return "data";
    case ErrorKind::io: return "io";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::internal: return "internal";
  }
  return "internal";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Returns a copy whose message is prefixed with `context`.
  Error with_context(const std::string& context) const {
    return Error(kind_, context + ": " + what());
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace viewmatch
