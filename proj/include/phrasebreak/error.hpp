#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace phrasebreak {

enum class ErrorKind {
  parse,
  invalid_argument,
  empty_input,
  io,
  bad_magic,
  truncated,
  shape_mismatch,
  not_found,
  duplicate,
  out_of_range,
  out_of_order,
  non_finite,
  divergence,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parse: return "parse_error";
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::empty_input: return "empty_input";
    case ErrorKind::io: return "io_error";
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::shape_mismatch: return "shape_mismatch";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::duplicate: return "duplicate";
    case ErrorKind::out_of_range: return "out_of_range";
    case ErrorKind::out_of_order: return "out_of_order";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::divergence: return "divergence";
  }
  return "unknown";
}

// Single exception type for the library; callers branch on kind().
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

}  // namespace phrasebreak
