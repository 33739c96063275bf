#include "tifu/mesh.hpp"

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace tifu {

Aabb TriangleMesh::bounds() const {
  Aabb box;
  for (const Vec3& v : vertices) box.expand(v);
  return box;
}

double TriangleMesh::triangle_area(uint32_t tri) const {
  const Vec3 a = triangle_vertex(tri, 0);
  const Vec3 b = triangle_vertex(tri, 1);
  const Vec3 c = triangle_vertex(tri, 2);
  return 0.5 * norm(cross(b - a, c - a));
}

void TriangleMesh::update_normals() {
  face_normals.resize(triangles.size());
  for (size_t i = 0; i < triangles.size(); ++i) {
    const Vec3 a = triangle_vertex(static_cast<uint32_t>(i), 0);
    const Vec3 b = triangle_vertex(static_cast<uint32_t>(i), 1);
    const Vec3 c = triangle_vertex(static_cast<uint32_t>(i), 2);
    Vec3 n = cross(b - a, c - a);
    double len = norm(n);
    face_normals[i] = len > 1e-30 ? n / len : Vec3{0.0, 0.0, 1.0};
  }
}

namespace {

[[noreturn]] void parse_fail(const std::string& path, int line, const std::string& msg) {
  throw ParseError(path + ":" + std::to_string(line) + ": " + msg);
}

// OBJ face token: "v", "v/t", "v//n", or "v/t/n". Only the vertex index is
// used. Negative indices count back from the current vertex count.
uint32_t parse_face_index(const std::string& token, size_t vertex_count,
                          const std::string& path, int line) {
  size_t slash = token.find('/');
  std::string head = slash == std::string::npos ? token : token.substr(0, slash);
  long idx = 0;
  try {
    size_t used = 0;
    idx = std::stol(head, &used);
    if (used != head.size()) throw std::invalid_argument(head);
  } catch (const std::exception&) {
    parse_fail(path, line, "bad face index '" + token + "'");
  }
  long resolved = idx > 0 ? idx - 1 : static_cast<long>(vertex_count) + idx;
  if (resolved < 0 || resolved >= static_cast<long>(vertex_count))
    parse_fail(path, line, "face index out of range: " + head + " with " +
                               std::to_string(vertex_count) + " vertices");
  return static_cast<uint32_t>(resolved);
}

}  // namespace

TriangleMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh file: " + path);

  TriangleMesh mesh;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag.empty() || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x >> v.y >> v.z)) parse_fail(path, line_no, "malformed vertex record");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<uint32_t> poly;
      std::string token;
      while (ls >> token) poly.push_back(parse_face_index(token, mesh.vertices.size(), path, line_no));
      if (poly.size() < 3) parse_fail(path, line_no, "face with fewer than 3 vertices");
      for (size_t k = 2; k < poly.size(); ++k)
        mesh.triangles.push_back({poly[0], poly[k - 1], poly[k]});
    }
    // vn / vt / o / g / usemtl and anything else: ignored on input
  }
  mesh.update_normals();
  return mesh;
}

void save_obj(const TriangleMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open output file: " + path);
  char buf[160];
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", v.x, v.y, v.z);
    out << buf;
  }
  for (const Vec3& n : mesh.face_normals) {
    std::snprintf(buf, sizeof(buf), "vn %.9g %.9g %.9g\n", n.x, n.y, n.z);
    out << buf;
  }
  for (size_t i = 0; i < mesh.triangles.size(); ++i) {
    const Triangle& t = mesh.triangles[i];
    std::snprintf(buf, sizeof(buf), "f %u//%zu %u//%zu %u//%zu\n", t[0] + 1, i + 1, t[1] + 1,
                  i + 1, t[2] + 1, i + 1);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path);
}

std::pair<TriangleMesh, SimilarityTransform> normalize_to_canonical(const TriangleMesh& mesh,
                                                                    double margin) {
  if (mesh.vertices.empty()) throw std::invalid_argument("normalize_to_canonical: empty mesh");
  if (!(margin >= 0.0 && margin < 0.5))
    throw std::invalid_argument("normalize_to_canonical: margin must be in [0, 0.5)");
  Aabb box = mesh.bounds();
  Vec3 ext = box.extent();
  double longest = std::max({ext.x, ext.y, ext.z});
  if (!(longest > 0.0))
    throw std::invalid_argument("normalize_to_canonical: degenerate bounding box");

  SimilarityTransform canonical_to_original;
  canonical_to_original.scale = longest / (1.0 - 2.0 * margin);
  canonical_to_original.translation = box.center();

  TriangleMesh out = mesh;
  for (Vec3& v : out.vertices) v = canonical_to_original.apply_inverse(v);
  out.update_normals();
  return {std::move(out), canonical_to_original};
}

bool is_watertight(const TriangleMesh& mesh) {
  if (mesh.empty()) return false;
  // key: undirected edge; value: (forward count, backward count) relative to
  // the key's (lo, hi) ordering.
  std::map<std::pair<uint32_t, uint32_t>, std::pair<int, int>> edges;
  for (const Triangle& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      uint32_t a = t[e], b = t[(e + 1) % 3];
      if (a == b) return false;
      auto key = std::minmax(a, b);
      auto& counts = edges[{key.first, key.second}];
      (a < b ? counts.first : counts.second) += 1;
    }
  }
  for (const auto& [key, counts] : edges)
    if (counts.first != 1 || counts.second != 1) return false;
  return true;
}

TriangleMesh apply_transform(const TriangleMesh& mesh, const RigidTransform& xf) {
  TriangleMesh out = mesh;
  for (Vec3& v : out.vertices) v = xf.apply(v);
  out.update_normals();
  return out;
}

}  // namespace tifu
