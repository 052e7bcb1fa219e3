#pragma once

#define GSWLAB_VERSION_MAJOR 0
#define GSWLAB_VERSION_MINOR 1
#define GSWLAB_VERSION_PATCH 0

namespace gswlab {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kSnapshotVersion = 1;

}  // namespace gswlab
