#pragma once

namespace cyclead {

inline constexpr const char* kArtifactVersion = "0.1.0";
inline constexpr unsigned kCheckpointFormatVersion = 1;
inline constexpr unsigned kScoresFormatVersion = 1;

}  // namespace cyclead
