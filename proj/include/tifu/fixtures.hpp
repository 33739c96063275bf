#pragma once

#include "tifu/mesh.hpp"

namespace tifu {

// Watertight test solids in canonical-cube coordinates.

// Subdivided icosahedron, vertices on the sphere of the given radius.
// subdivisions=4 gives 5120 triangles.
TriangleMesh make_icosphere(double radius, int subdivisions);

// Latitude/longitude sphere with pole vertices on the z axis. segments must
// be a multiple of 4; the vertex ring coordinates are mirrored from the
// first quadrant so the mesh is exactly symmetric under 90-degree rotations
// about z.
TriangleMesh make_uv_sphere(double radius, int rings, int segments);

TriangleMesh make_box(const Vec3& center, const Vec3& half_extents);

// Two blocks joined by a thin square neck along x. With the default
// dimensions the neck cross-section is exactly 0.05 x 0.05, so the minimum
// tri-axial span at the neck center is 0.05.
TriangleMesh make_dumbbell();

}  // namespace tifu
