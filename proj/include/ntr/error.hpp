#pragma once

#include <stdexcept>
#include <string>

namespace ntr {

enum class ErrorCode {
  structural,
  invalid_position,
  invalid_distribution,
  incomplete_scoring,
  invalid_group,
  configuration,
  empty_corpus,
  insufficient_data,
  collinearity,
  log_corruption,
  non_finite,
  decode,
  parse,
  io,
  dependency,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; the code says which contract broke.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  // Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace ntr
