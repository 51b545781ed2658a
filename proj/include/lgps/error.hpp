#pragma once

#include <stdexcept>
#include <string>

namespace lgps {

enum class ErrorKind {
  kInvalidArgument,
  kSegmentationFailed,
  kGenerationFailed,
  kInvalidPose,
  kNoTangent,
  kTrainingDiverged,
  kOptimization,
  kDepthUnavailable,
  kData,
  kIo,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; `kind()` lets callers (CLI, server)
// map failures onto exit codes and HTTP statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace lgps
