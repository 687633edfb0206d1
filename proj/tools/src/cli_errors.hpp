#pragma once

#include <stdexcept>
#include <string>

namespace latentshield::cli {

/// Config file is malformed, fails schema validation, or holds bad values.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A required upstream artifact (dataset, checkpoint, stage output) is absent.
struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Exit codes, one per machine-readable error kind.
enum ExitCode {
  kOk = 0,
  kRuntime = 1,
  kConfig = 2,
  kMissingArtifact = 3,
  kInvalidArgument = 4,
};

}  // namespace latentshield::cli
