#pragma once

#include <stdexcept>
#include <string>

namespace mesp {

enum class ErrorKind {
  kInvalidShape,
  kInvalidArgument,
  kInvalidState,
  kFormat,
  kConfig,
  kIo,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; `kind()` distinguishes the failure
// class so callers and tests can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace mesp
