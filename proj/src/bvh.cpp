#include "tifu/bvh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tifu {

namespace {

constexpr uint32_t kLeafSize = 4;
constexpr double kDedupEps = 1e-9;

// Watertight ray/triangle intersection in the shear-transformed ray frame.
// Shared edges and vertices report consistent hits from both triangles, so a
// graze double-counts (and is collapsed by dedup) rather than slipping
// through a seam.
struct ShearRay {
  Vec3 origin;
  Vec3 dir;
  int kx, ky, kz;
  double sx, sy, sz;

  ShearRay(const Vec3& o, const Vec3& d) : origin(o), dir(d) {
    kz = 0;
    if (std::abs(d.y) > std::abs(d.x)) kz = 1;
    if (std::abs(d.z) > std::abs(d[kz])) kz = 2;
    kx = (kz + 1) % 3;
    ky = (kx + 1) % 3;
    if (d[kz] < 0.0) std::swap(kx, ky);
    sx = d[kx] / d[kz];
    sy = d[ky] / d[kz];
    sz = 1.0 / d[kz];
  }

  bool intersect(const Vec3& va, const Vec3& vb, const Vec3& vc, double& t_out) const {
    const Vec3 a = va - origin, b = vb - origin, c = vc - origin;
    const double ax = a[kx] - sx * a[kz], ay = a[ky] - sy * a[kz];
    const double bx = b[kx] - sx * b[kz], by = b[ky] - sy * b[kz];
    const double cx = c[kx] - sx * c[kz], cy = c[ky] - sy * c[kz];

    const double u = cx * by - cy * bx;
    const double v = ax * cy - ay * cx;
    const double w = bx * ay - by * ax;
    if ((u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0)) return false;
    const double det = u + v + w;
    if (det == 0.0) return false;

    const double az = sz * a[kz], bz = sz * b[kz], cz = sz * c[kz];
    const double t_scaled = u * az + v * bz + w * cz;
    const double t = t_scaled / det;
    if (!(t >= 0.0)) return false;
    t_out = t;
    return true;
  }
};

inline bool box_ray_slab(const Aabb& box, const Vec3& origin, const Vec3& inv_dir) {
  double t0 = 0.0, t1 = kInf;
  for (int a = 0; a < 3; ++a) {
    if (std::isinf(inv_dir[a])) {  // ray parallel to this slab
      if (origin[a] < box.lo[a] || origin[a] > box.hi[a]) return false;
      continue;
    }
    double lo = (box.lo[a] - origin[a]) * inv_dir[a];
    double hi = (box.hi[a] - origin[a]) * inv_dir[a];
    if (inv_dir[a] < 0.0) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
  }
  return t0 <= t1;
}

void finalize_hits(std::vector<RayHit>& hits) {
  std::sort(hits.begin(), hits.end(), [](const RayHit& a, const RayHit& b) {
    if (a.t != b.t) return a.t < b.t;
    if (a.front_facing != b.front_facing) return a.front_facing;  // tie: front-facing first
    return a.triangle_id < b.triangle_id;
  });
  std::vector<RayHit> out;
  out.reserve(hits.size());
  for (const RayHit& h : hits) {
    if (!out.empty() && std::abs(h.t - out.back().t) < kDedupEps) continue;
    out.push_back(h);
  }
  hits.swap(out);
}

double box_distance2(const Aabb& box, const Vec3& p) {
  double d2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    double v = p[a];
    if (v < box.lo[a]) d2 += (box.lo[a] - v) * (box.lo[a] - v);
    else if (v > box.hi[a]) d2 += (v - box.hi[a]) * (v - box.hi[a]);
  }
  return d2;
}

}  // namespace

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Ericson, Real-Time Collision Detection, 5.1.5.
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));

  const Vec3 cp = p - c;
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0)
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));

  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

Bvh::Bvh(TriangleMesh mesh) : mesh_(std::move(mesh)) {
  if (mesh_.empty()) throw std::invalid_argument("Bvh: empty mesh");
  const size_t n = mesh_.triangles.size();
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0u);

  std::vector<Vec3> centroids(n);
  std::vector<Aabb> tri_boxes(n);
  for (size_t i = 0; i < n; ++i) {
    Aabb box;
    for (int c = 0; c < 3; ++c) box.expand(mesh_.triangle_vertex(static_cast<uint32_t>(i), c));
    tri_boxes[i] = box;
    centroids[i] = box.center();
  }
  nodes_.reserve(2 * n);
  nodes_.emplace_back();
  build(0, 0, static_cast<uint32_t>(n), centroids, tri_boxes);
}

void Bvh::build(uint32_t node, uint32_t begin, uint32_t end, const std::vector<Vec3>& centroids,
                const std::vector<Aabb>& tri_boxes) {
  Aabb box;
  Aabb centroid_box;
  for (uint32_t i = begin; i < end; ++i) {
    box.expand(tri_boxes[order_[i]]);
    centroid_box.expand(centroids[order_[i]]);
  }
  nodes_[node].box = box;

  uint32_t count = end - begin;
  if (count <= kLeafSize) {
    nodes_[node].start = begin;
    nodes_[node].count = count;
    return;
  }
  int axis = centroid_box.longest_axis();
  uint32_t mid = begin + count / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](uint32_t a, uint32_t b) { return centroids[a][axis] < centroids[b][axis]; });

  int32_t left = static_cast<int32_t>(nodes_.size());
  nodes_.emplace_back();
  nodes_.emplace_back();
  nodes_[node].left = left;
  nodes_[node].right = left + 1;
  build(left, begin, mid, centroids, tri_boxes);
  build(left + 1, mid, end, centroids, tri_boxes);
}

void Bvh::collect_hits(const Vec3& origin, const Vec3& direction, std::vector<RayHit>& hits) const {
  const ShearRay ray(origin, direction);
  const Vec3 inv_dir{1.0 / direction.x, 1.0 / direction.y, 1.0 / direction.z};

  int32_t stack[64];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (!box_ray_slab(node.box, origin, inv_dir)) continue;
    if (node.is_leaf()) {
      for (uint32_t i = node.start; i < node.start + node.count; ++i) {
        uint32_t tri = order_[i];
        double t;
        if (ray.intersect(mesh_.triangle_vertex(tri, 0), mesh_.triangle_vertex(tri, 1),
                          mesh_.triangle_vertex(tri, 2), t)) {
          hits.push_back({t, tri, dot(direction, mesh_.face_normals[tri]) < 0.0});
        }
      }
    } else {
      stack[top++] = node.left;
      stack[top++] = node.right;
    }
  }
}

std::vector<RayHit> Bvh::ray_intersections(const Vec3& origin, const Vec3& direction) const {
  std::vector<RayHit> hits;
  collect_hits(origin, direction, hits);
  finalize_hits(hits);
  return hits;
}

std::vector<RayHit> ray_intersections_brute_force(const TriangleMesh& mesh, const Vec3& origin,
                                                  const Vec3& direction) {
  const ShearRay ray(origin, direction);
  std::vector<RayHit> hits;
  for (uint32_t tri = 0; tri < mesh.triangles.size(); ++tri) {
    double t;
    if (ray.intersect(mesh.triangle_vertex(tri, 0), mesh.triangle_vertex(tri, 1),
                      mesh.triangle_vertex(tri, 2), t)) {
      hits.push_back({t, tri, dot(direction, mesh.face_normals[tri]) < 0.0});
    }
  }
  finalize_hits(hits);
  return hits;
}

bool Bvh::point_inside(const Vec3& point) const {
  const Aabb& root = nodes_[0].box;
  if (point.x < root.lo.x || point.y < root.lo.y || point.z < root.lo.z || point.x > root.hi.x ||
      point.y > root.hi.y || point.z > root.hi.z)
    return false;

  const Vec3 dir{1.0, 0.0, 0.0};
  const double pad = 1.0 + (root.hi.x - root.lo.x);
  // Jitter schedule for degenerate (odd full-line parity) casts.
  static constexpr double kJitterScale[5] = {0.0, 1.0, -1.0, 2.0, -2.0};
  size_t crossings_before = 0;
  for (double scale : kJitterScale) {
    Vec3 origin{root.lo.x - pad, point.y + scale * 1e-7, point.z + scale * 1e-7};
    std::vector<RayHit> hits = ray_intersections(origin, dir);
    const double t_point = point.x - origin.x;
    crossings_before = 0;
    for (const RayHit& h : hits)
      if (h.t < t_point) ++crossings_before;
    if (hits.size() % 2 == 0) break;  // clean parity along the full line
  }
  return crossings_before % 2 == 1;
}

double Bvh::closest_distance(const Vec3& point) const {
  Vec3 cp = closest_point(point);
  return norm(point - cp);
}

Vec3 Bvh::closest_point(const Vec3& point, uint32_t* triangle_id) const {
  struct Entry {
    double d2;
    int32_t node;
  };
  Entry stack[64];
  int top = 0;
  stack[top++] = {box_distance2(nodes_[0].box, point), 0};

  double best_d2 = kInf;
  Vec3 best_point{};
  uint32_t best_tri = 0;

  while (top > 0) {
    Entry e = stack[--top];
    if (e.d2 >= best_d2) continue;
    const Node& node = nodes_[e.node];
    if (node.is_leaf()) {
      for (uint32_t i = node.start; i < node.start + node.count; ++i) {
        uint32_t tri = order_[i];
        Vec3 cp = closest_point_on_triangle(point, mesh_.triangle_vertex(tri, 0),
                                            mesh_.triangle_vertex(tri, 1),
                                            mesh_.triangle_vertex(tri, 2));
        double d2 = norm2(point - cp);
        if (d2 < best_d2) {
          best_d2 = d2;
          best_point = cp;
          best_tri = tri;
        }
      }
    } else {
      Entry kids[2] = {{box_distance2(nodes_[node.left].box, point), node.left},
                       {box_distance2(nodes_[node.right].box, point), node.right}};
      // push farther child first so the nearer one is processed next
      if (kids[0].d2 < kids[1].d2) std::swap(kids[0], kids[1]);
      for (const Entry& k : kids)
        if (k.d2 < best_d2) stack[top++] = k;
    }
  }
  if (triangle_id) *triangle_id = best_tri;
  return best_point;
}

}  // namespace tifu
