#pragma once

#include <string>
#include <vector>

#include "tifu/bvh.hpp"
#include "tifu/mesh.hpp"

namespace tifu {

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;  // optional; face normals when sampled from a mesh
};

// Per-pixel camera-space unit normals; (0,0,0) marks background.
struct NormalMap {
  int width = 0, height = 0;
  std::vector<Vec3> pixels;

  Vec3& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }
  const Vec3& at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
  bool foreground(int x, int y) const {
    const Vec3& n = at(x, y);
    return n.x != 0.0 || n.y != 0.0 || n.z != 0.0;
  }
};

// Area-weighted triangle selection with uniform barycentric placement;
// normals copied from the faces. Seeded and deterministic.
PointCloud sample_surface(const TriangleMesh& mesh, int n, uint64_t seed);

// Mean exact point-to-triangle distance from each point of pred to gt_mesh.
double p2s(const PointCloud& pred, const Bvh& gt_mesh);
double p2s(const PointCloud& pred, const TriangleMesh& gt_mesh);

// Symmetric two-way mean nearest-neighbor distance:
// 0.5 * (mean_a min_b |a-b| + mean_b min_a |b-a|).
double chamfer(const PointCloud& a, const PointCloud& b);

// Which pixels enter the normal-consistency average.
enum class NormalAverage { ForegroundUnion, ForegroundIntersection, FullFrame };

// Orthographic render of camera-space face normals after rotating the mesh
// about +y by yaw degrees; the camera looks down -z and the canonical cube
// fills the frame. Nearest surface wins the z-buffer.
NormalMap render_normal_map(const TriangleMesh& mesh, double yaw_degrees, int res);

// Mean over six views (yaw 0,60,...,300) of the per-pixel L2 normal error,
// averaged per the chosen pixel set (union of foregrounds by default, with
// the zero sentinel standing in where one map is background).
double normal_consistency(const TriangleMesh& pred, const TriangleMesh& gt, int res,
                          NormalAverage average = NormalAverage::ForegroundUnion);

// Portable float map dump (PF, 3-channel, bottom row first).
void write_pfm(const NormalMap& map, const std::string& path);

}  // namespace tifu
