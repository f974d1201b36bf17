#include "porenet/error.hpp"

namespace porenet {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kOutOfBounds: return "out-of-bounds";
    case ErrorKind::kAlignment: return "alignment";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kPrerequisite: return "prerequisite";
    case ErrorKind::kManifest: return "manifest";
    case ErrorKind::kState: return "state";
  }
  return "unknown";
}

}  // namespace porenet
