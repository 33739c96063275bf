#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "tifu/geom.hpp"

namespace tifu {

// Input data that cannot be parsed (OBJ syntax, dataset magic, ...).
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem-level failures (missing file, short read/write).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Triangle = std::array<uint32_t, 3>;

// Indexed triangle soup with per-face unit normals derived from winding.
// After normalize_to_canonical all vertices lie in [-0.5, 0.5]^3.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
  std::vector<Vec3> face_normals;

  bool empty() const { return triangles.empty(); }
  Aabb bounds() const;
  Vec3 triangle_vertex(uint32_t tri, int corner) const {
    return vertices[triangles[tri][corner]];
  }
  double triangle_area(uint32_t tri) const;

  // Recomputes face_normals from winding. Degenerate faces get a unit
  // placeholder so the unit-length invariant holds.
  void update_normals();
};

// Wavefront OBJ, ASCII. Reads v/f records, fan-triangulates polygons,
// ignores vn/vt/usemtl. Throws ParseError with a "path:line:" prefix.
TriangleMesh load_obj(const std::string& path);
// Writes v records, one vn per face, and f records as v//n triples.
void save_obj(const TriangleMesh& mesh, const std::string& path);

// Uniformly scales and translates so the tight bounding box is centered at
// the origin with longest side 1 - 2*margin. The returned transform maps
// canonical coordinates back to the original frame.
std::pair<TriangleMesh, SimilarityTransform> normalize_to_canonical(const TriangleMesh& mesh,
                                                                    double margin = 0.0);

// True iff every edge is shared by exactly two triangles with consistent
// winding (each directed edge appears once, paired with its reverse).
bool is_watertight(const TriangleMesh& mesh);

TriangleMesh apply_transform(const TriangleMesh& mesh, const RigidTransform& xf);

}  // namespace tifu
