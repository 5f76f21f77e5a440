#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xaits {

enum class ErrorKind {
  kFormat,
  kParse,
  kEmptyDataset,
  kArgument,
  kConfig,
  kShape,
  kCapability,
  kDivergence,
  kAlignment,
  kValidation,
  kTimeout,
  kTransport,
  kProtocol,
  kMalformedFrame,
  kVersionMismatch,
  kIncompleteRun,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and the CLI's
// machine-readable error record) can dispatch without parsing messages.
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

}  // namespace xaits
