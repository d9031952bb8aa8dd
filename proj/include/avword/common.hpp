// Shared error handling, version string and small utilities.
#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace avword {

inline constexpr const char* kVersionString = "avword-0.1.0";

// Raised on any contract violation (shape mismatch, malformed file, bad config).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Subclasses carrying the CLI exit-code semantics.
class ConfigError : public Error {  // exit 2
 public:
  using Error::Error;
};
class ArtifactError : public Error {  // exit 3: checkpoint/model-spec mismatch
 public:
  using Error::Error;
};
class NumericError : public Error {  // exit 4: NaN / failed numeric assert
 public:
  using Error::Error;
};

namespace detail {
[[noreturn]] inline void throw_check_failure(const char* expr, const std::string& msg) {
  std::ostringstream os;
  os << "check failed: " << expr;
  if (!msg.empty()) os << " — " << msg;
  throw Error(os.str());
}
}  // namespace detail

}  // namespace avword

// AVW_CHECK(cond) or AVW_CHECK(cond, streamed << message)
#define AVW_CHECK(cond, ...)                                              \
  do {                                                                    \
    if (!(cond)) {                                                        \
      std::ostringstream avw_os_;                                         \
      avw_os_ << "" __VA_ARGS__;                                          \
      ::avword::detail::throw_check_failure(#cond, avw_os_.str());        \
    }                                                                     \
  } while (0)

#define AVW_FAIL(...)                              \
  do {                                             \
    std::ostringstream avw_os_;                    \
    avw_os_ << __VA_ARGS__;                        \
    throw ::avword::Error(avw_os_.str());          \
  } while (0)

#define AVW_FAIL_AS(ErrorType, ...)                \
  do {                                             \
    std::ostringstream avw_os_;                    \
    avw_os_ << __VA_ARGS__;                        \
    throw ErrorType(avw_os_.str());                \
  } while (0)
