#pragma once

#include <cstdint>

namespace tifu {

extern const uint16_t kMcEdges[256];
extern const int8_t kMcTriangles[256][16];

}  // namespace tifu
