#pragma once

#include <stdexcept>
#include <string>

namespace ockd {

// Failure categories double as CLI exit codes.
enum class ErrorKind : int {
  kUsage = 2,    // bad flags, bad config
  kData = 3,     // malformed or inconsistent input files
  kNumeric = 4,  // NaN/Inf during training or scoring
  kShape = 5,    // tensor shape mismatch
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept {
    return kind_ == ErrorKind::kShape ? 3 : static_cast<int>(kind_);
  }

 private:
  ErrorKind kind_;
};

inline Error usage_error(const std::string& what) { return {ErrorKind::kUsage, what}; }
inline Error data_error(const std::string& what) { return {ErrorKind::kData, what}; }
inline Error numeric_error(const std::string& what) { return {ErrorKind::kNumeric, what}; }

}  // namespace ockd
