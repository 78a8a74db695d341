#include "mesp/error.hpp"

namespace mesp {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidShape:
      return "invalid shape";
    case ErrorKind::kInvalidArgument:
      return "invalid argument";
    case ErrorKind::kInvalidState:
      return "invalid state";
    case ErrorKind::kFormat:
      return "format error";
    case ErrorKind::kConfig:
      return "config error";
    case ErrorKind::kIo:
      return "io error";
  }
  return "error";
}

void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, std::string(to_string(kind)) + ": " + message);
}

}  // namespace mesp
