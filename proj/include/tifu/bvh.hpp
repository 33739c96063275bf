#pragma once

#include <vector>

#include "tifu/mesh.hpp"

namespace tifu {

// One ray-mesh intersection. Hit lists are sorted ascending by t and
// deduplicated: hits closer than 1e-9 in t collapse to one, keeping the
// front-facing one (ray . normal < 0) on ties.
struct RayHit {
  double t = 0.0;
  uint32_t triangle_id = 0;
  bool front_facing = false;
};

// Axis-aligned BVH over mesh triangles; median split on the longest centroid
// axis, at most 4 triangles per leaf. Immutable after construction and safe
// to share across threads.
class Bvh {
 public:
  struct Node {
    Aabb box;
    int32_t left = -1;   // internal: child indices
    int32_t right = -1;
    uint32_t start = 0;  // leaf: range into triangle_order
    uint32_t count = 0;  // 0 for internal nodes
    bool is_leaf() const { return count > 0; }
  };

  explicit Bvh(TriangleMesh mesh);  // takes its own copy of the mesh

  const TriangleMesh& mesh() const { return mesh_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<uint32_t>& triangle_order() const { return order_; }
  const Aabb& root_bounds() const { return nodes_[0].box; }

  // All intersections with t >= 0, sorted and deduplicated. direction must be
  // unit length within 1e-6.
  std::vector<RayHit> ray_intersections(const Vec3& origin, const Vec3& direction) const;

  // Crossing-parity containment along a fixed +x ray. When the full line
  // through the point reports an odd crossing count (edge/vertex graze on a
  // watertight mesh), the ray origin is jittered along both perpendicular
  // axes and re-cast.
  bool point_inside(const Vec3& point) const;

  // Exact distance from point to the nearest triangle (and that point).
  double closest_distance(const Vec3& point) const;
  Vec3 closest_point(const Vec3& point, uint32_t* triangle_id = nullptr) const;

 private:
  void build(uint32_t node, uint32_t begin, uint32_t end,
             const std::vector<Vec3>& centroids, const std::vector<Aabb>& tri_boxes);
  void collect_hits(const Vec3& origin, const Vec3& direction, std::vector<RayHit>& hits) const;

  TriangleMesh mesh_;
  std::vector<Node> nodes_;
  std::vector<uint32_t> order_;
};

// Brute-force variant of ray_intersections used as the traversal oracle in
// tests; same intersection and dedup rules, no acceleration.
std::vector<RayHit> ray_intersections_brute_force(const TriangleMesh& mesh, const Vec3& origin,
                                                  const Vec3& direction);

// Exact closest point on one triangle.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

}  // namespace tifu
