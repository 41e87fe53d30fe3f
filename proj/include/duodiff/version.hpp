#pragma once

#include <cstdint>
#include <string>

namespace duodiff {

inline constexpr const char* kVersion = "0.1.0";

/// Identifies the run that produced an artifact.
struct ArtifactStamp {
  std::string config_hash;
  uint64_t seed = 0;
  std::string version = kVersion;
};

}  // namespace duodiff
