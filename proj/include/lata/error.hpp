#pragma once

#include <stdexcept>
#include <string>

namespace lata {

enum class ErrorCode {
  invalid_input,
  dimension_mismatch,
  io_failure,
  malformed_header,
  length_mismatch,
  empty_matrix,
  validation,
  config,
  data,
  numerical,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_input: return "invalid-input";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::io_failure: return "io-failure";
    case ErrorCode::malformed_header: return "malformed-header";
    case ErrorCode::length_mismatch: return "length-mismatch";
    case ErrorCode::empty_matrix: return "empty-matrix";
    case ErrorCode::validation: return "validation";
    case ErrorCode::config: return "config";
    case ErrorCode::data: return "data";
    case ErrorCode::numerical: return "numerical";
  }
  return "unknown";
}

/// Single exception type for the library; the code says which contract was broken.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

namespace detail {

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

}  // namespace detail
}  // namespace lata
