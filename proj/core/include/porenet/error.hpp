#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace porenet {

/// Coarse failure category. The CLI prints it as a machine-parsable prefix.
enum class ErrorKind {
  kIo,
  kFormat,
  kInvalidArgument,
  kOutOfBounds,
  kAlignment,
  kNumeric,
  kPrerequisite,
  kManifest,
  kState,
};

std::string_view error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace porenet
