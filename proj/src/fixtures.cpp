#include "tifu/fixtures.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace tifu {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct MeshBuilder {
  TriangleMesh mesh;
  std::map<std::array<double, 3>, uint32_t> index;

  uint32_t vertex(const Vec3& p) {
    auto [it, inserted] = index.try_emplace({p.x, p.y, p.z}, 0u);
    if (inserted) {
      it->second = static_cast<uint32_t>(mesh.vertices.size());
      mesh.vertices.push_back(p);
    }
    return it->second;
  }
  void tri(const Vec3& a, const Vec3& b, const Vec3& c) {
    mesh.triangles.push_back({vertex(a), vertex(b), vertex(c)});
  }
  void quad(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    tri(a, b, c);
    tri(a, c, d);
  }
  TriangleMesh finish() {
    mesh.update_normals();
    return std::move(mesh);
  }
};

// Outward-wound faces of an axis-aligned box; skip_face in
// {-1,0,1,2,3,4,5} = none,-x,+x,-y,+y,-z,+z.
void add_box_faces(MeshBuilder& b, const Vec3& lo, const Vec3& hi, int skip_face = -1) {
  auto corner = [&](int bits) {
    return Vec3{bits & 1 ? hi.x : lo.x, bits & 2 ? hi.y : lo.y, bits & 4 ? hi.z : lo.z};
  };
  struct Face {
    int id;
    int c[4];
  };
  static constexpr Face faces[6] = {
      {0, {0, 4, 6, 2}},  // -x
      {1, {1, 3, 7, 5}},  // +x
      {2, {0, 1, 5, 4}},  // -y
      {3, {2, 6, 7, 3}},  // +y
      {4, {0, 2, 3, 1}},  // -z
      {5, {4, 5, 7, 6}},  // +z
  };
  for (const Face& f : faces) {
    if (f.id == skip_face) continue;
    b.quad(corner(f.c[0]), corner(f.c[1]), corner(f.c[2]), corner(f.c[3]));
  }
}

// Square ring in the x = x0 plane between half-widths outer and inner,
// wound so the normal points along +x when outward_positive_x.
void add_square_ring(MeshBuilder& b, double x0, double outer, double inner,
                     bool outward_positive_x) {
  const double oy[4] = {-outer, outer, outer, -outer};
  const double oz[4] = {-outer, -outer, outer, outer};
  const double iy[4] = {-inner, inner, inner, -inner};
  const double iz[4] = {-inner, -inner, inner, inner};
  for (int k = 0; k < 4; ++k) {
    int k1 = (k + 1) % 4;
    Vec3 o0{x0, oy[k], oz[k]}, o1{x0, oy[k1], oz[k1]};
    Vec3 i0{x0, iy[k], iz[k]}, i1{x0, iy[k1], iz[k1]};
    if (outward_positive_x)
      b.quad(o0, o1, i1, i0);
    else
      b.quad(o1, o0, i0, i1);
  }
}

}  // namespace

TriangleMesh make_icosphere(double radius, int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  std::vector<Triangle> tris = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int level = 0; level < subdivisions; ++level) {
    std::map<std::pair<uint32_t, uint32_t>, uint32_t> midpoint;
    auto mid = [&](uint32_t a, uint32_t b) {
      auto key = std::minmax(a, b);
      auto [it, inserted] = midpoint.try_emplace({key.first, key.second}, 0u);
      if (inserted) {
        it->second = static_cast<uint32_t>(verts.size());
        verts.push_back((verts[a] + verts[b]) * 0.5);
      }
      return it->second;
    };
    std::vector<Triangle> next;
    next.reserve(tris.size() * 4);
    for (const Triangle& f : tris) {
      uint32_t ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    tris.swap(next);
  }
  TriangleMesh mesh;
  mesh.vertices.reserve(verts.size());
  for (const Vec3& v : verts) mesh.vertices.push_back(normalized(v) * radius);
  mesh.triangles = std::move(tris);
  mesh.update_normals();
  return mesh;
}

TriangleMesh make_uv_sphere(double radius, int rings, int segments) {
  if (rings < 2 || segments < 4 || segments % 4 != 0)
    throw std::invalid_argument("make_uv_sphere: rings >= 2, segments a positive multiple of 4");

  // Unit-circle samples, first quadrant mirrored so a 90-degree rotation
  // about z maps the vertex set onto itself exactly.
  std::vector<double> cs(segments), sn(segments);
  const int quarter = segments / 4;
  for (int j = 0; j < quarter; ++j) {
    double a = 2.0 * kPi * j / segments;
    double c = std::cos(a), s = std::sin(a);
    cs[j] = c;               sn[j] = s;
    cs[j + quarter] = -s;    sn[j + quarter] = c;
    cs[j + 2 * quarter] = -c; sn[j + 2 * quarter] = -s;
    cs[j + 3 * quarter] = s; sn[j + 3 * quarter] = -c;
  }

  TriangleMesh mesh;
  mesh.vertices.push_back({0, 0, radius});  // north pole
  for (int i = 1; i < rings; ++i) {
    double polar = kPi * i / rings;
    double z = radius * std::cos(polar);
    double rho = radius * std::sin(polar);
    for (int j = 0; j < segments; ++j) mesh.vertices.push_back({rho * cs[j], rho * sn[j], z});
  }
  mesh.vertices.push_back({0, 0, -radius});  // south pole

  auto ring_vertex = [&](int ring, int j) {
    return static_cast<uint32_t>(1 + (ring - 1) * segments + (j % segments));
  };
  const uint32_t north = 0;
  const uint32_t south = static_cast<uint32_t>(mesh.vertices.size() - 1);

  for (int j = 0; j < segments; ++j)
    mesh.triangles.push_back({north, ring_vertex(1, j), ring_vertex(1, j + 1)});
  for (int i = 1; i + 1 < rings; ++i) {
    for (int j = 0; j < segments; ++j) {
      uint32_t a = ring_vertex(i, j), b = ring_vertex(i, j + 1);
      uint32_t c = ring_vertex(i + 1, j + 1), d = ring_vertex(i + 1, j);
      mesh.triangles.push_back({a, d, c});
      mesh.triangles.push_back({a, c, b});
    }
  }
  for (int j = 0; j < segments; ++j)
    mesh.triangles.push_back({south, ring_vertex(rings - 1, j + 1), ring_vertex(rings - 1, j)});
  mesh.update_normals();
  return mesh;
}

TriangleMesh make_box(const Vec3& center, const Vec3& half_extents) {
  MeshBuilder b;
  add_box_faces(b, center - half_extents, center + half_extents);
  return b.finish();
}

TriangleMesh make_dumbbell() {
  const double block_half = 0.175;   // block cross-section half-width
  const double neck_half = 0.025;    // neck cross-section half-width (span 0.05)
  const double x_out = 0.45, x_in = 0.15;

  MeshBuilder b;
  // left block, open toward +x
  add_box_faces(b, {-x_out, -block_half, -block_half}, {-x_in, block_half, block_half}, 1);
  add_square_ring(b, -x_in, block_half, neck_half, true);
  // neck: four side walls
  b.quad({-x_in, -neck_half, -neck_half}, {x_in, -neck_half, -neck_half},
         {x_in, -neck_half, neck_half}, {-x_in, -neck_half, neck_half});   // -y
  b.quad({-x_in, neck_half, -neck_half}, {-x_in, neck_half, neck_half},
         {x_in, neck_half, neck_half}, {x_in, neck_half, -neck_half});     // +y
  b.quad({-x_in, -neck_half, -neck_half}, {-x_in, neck_half, -neck_half},
         {x_in, neck_half, -neck_half}, {x_in, -neck_half, -neck_half});   // -z
  b.quad({-x_in, -neck_half, neck_half}, {x_in, -neck_half, neck_half},
         {x_in, neck_half, neck_half}, {-x_in, neck_half, neck_half});     // +z
  // right block, open toward -x
  add_square_ring(b, x_in, block_half, neck_half, false);
  add_box_faces(b, {x_in, -block_half, -block_half}, {x_out, block_half, block_half}, 0);
  return b.finish();
}

}  // namespace tifu
