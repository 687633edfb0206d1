#pragma once

namespace latentshield {

inline constexpr const char* kVersion = "0.1.0";

// Bumped whenever the checkpoint container layout changes.
inline constexpr int kCheckpointFormatVersion = 1;

inline constexpr int kConfigSchemaVersion = 1;

}  // namespace latentshield
