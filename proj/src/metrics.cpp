#include "tifu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "tifu/parallel.hpp"

namespace tifu {

PointCloud sample_surface(const TriangleMesh& mesh, int n, uint64_t seed) {
  if (mesh.empty()) throw std::invalid_argument("sample_surface: empty mesh");
  if (n < 1) throw std::invalid_argument("sample_surface: n must be >= 1");

  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0.0;
  for (uint32_t t = 0; t < mesh.triangles.size(); ++t) {
    total += mesh.triangle_area(t);
    cumulative[t] = total;
  }
  if (!(total > 0.0)) throw std::invalid_argument("sample_surface: zero-area mesh");

  PointCloud cloud;
  cloud.points.resize(n);
  cloud.normals.resize(n);
  Rng rng(seed ^ 0x8E9D3F1C65A2B7D1ULL);
  for (int i = 0; i < n; ++i) {
    double pick = rng.next_double() * total;
    uint32_t t = static_cast<uint32_t>(
        std::lower_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
    if (t >= mesh.triangles.size()) t = static_cast<uint32_t>(mesh.triangles.size() - 1);
    // uniform barycentric via the square-root trick
    double r1 = std::sqrt(rng.next_double());
    double r2 = rng.next_double();
    double u = 1.0 - r1, v = r1 * (1.0 - r2), w = r1 * r2;
    cloud.points[i] = mesh.triangle_vertex(t, 0) * u + mesh.triangle_vertex(t, 1) * v +
                      mesh.triangle_vertex(t, 2) * w;
    cloud.normals[i] = mesh.face_normals[t];
  }
  return cloud;
}

double p2s(const PointCloud& pred, const Bvh& gt_mesh) {
  if (pred.points.empty()) throw std::invalid_argument("p2s: empty point cloud");
  std::vector<double> dist(pred.points.size());
  parallel_for(pred.points.size(), [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) dist[i] = gt_mesh.closest_distance(pred.points[i]);
  });
  return std::accumulate(dist.begin(), dist.end(), 0.0) / static_cast<double>(dist.size());
}

double p2s(const PointCloud& pred, const TriangleMesh& gt_mesh) {
  Bvh bvh(gt_mesh);
  return p2s(pred, bvh);
}

namespace {

// Minimal kd-tree over points for nearest-neighbor queries.
class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& points) : points_(points) {
    index_.resize(points.size());
    std::iota(index_.begin(), index_.end(), 0u);
    nodes_.reserve(points.size() * 2);
    root_ = build(0, static_cast<uint32_t>(points.size()));
  }

  double nearest_distance(const Vec3& q) const {
    double best = kInf;
    search(root_, q, best);
    return std::sqrt(best);
  }

 private:
  struct Node {
    int axis = -1;       // -1 for leaf
    double split = 0.0;
    int32_t left = -1, right = -1;
    uint32_t begin = 0, end = 0;  // leaf range into index_
  };

  int32_t build(uint32_t begin, uint32_t end) {
    Node node;
    if (end - begin <= 8) {
      node.begin = begin;
      node.end = end;
      nodes_.push_back(node);
      return static_cast<int32_t>(nodes_.size() - 1);
    }
    Aabb box;
    for (uint32_t i = begin; i < end; ++i) box.expand(points_[index_[i]]);
    node.axis = box.longest_axis();
    uint32_t mid = (begin + end) / 2;
    std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end,
                     [&](uint32_t a, uint32_t b) {
                       return points_[a][node.axis] < points_[b][node.axis];
                     });
    node.split = points_[index_[mid]][node.axis];
    int32_t self = static_cast<int32_t>(nodes_.size());
    nodes_.push_back(node);
    int32_t left = build(begin, mid);
    int32_t right = build(mid, end);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
  }

  void search(int32_t id, const Vec3& q, double& best) const {
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (uint32_t i = node.begin; i < node.end; ++i)
        best = std::min(best, norm2(q - points_[index_[i]]));
      return;
    }
    double delta = q[node.axis] - node.split;
    int32_t near = delta < 0.0 ? node.left : node.right;
    int32_t far = delta < 0.0 ? node.right : node.left;
    search(near, q, best);
    if (delta * delta < best) search(far, q, best);
  }

  const std::vector<Vec3>& points_;
  std::vector<uint32_t> index_;
  std::vector<Node> nodes_;
  int32_t root_;
};

double one_way_mean(const std::vector<Vec3>& from, const KdTree& to) {
  std::vector<double> dist(from.size());
  parallel_for(from.size(), [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) dist[i] = to.nearest_distance(from[i]);
  });
  return std::accumulate(dist.begin(), dist.end(), 0.0) / static_cast<double>(dist.size());
}

}  // namespace

double chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.points.empty() || b.points.empty()) throw std::invalid_argument("chamfer: empty cloud");
  KdTree tree_a(a.points), tree_b(b.points);
  return 0.5 * (one_way_mean(a.points, tree_b) + one_way_mean(b.points, tree_a));
}

NormalMap render_normal_map(const TriangleMesh& mesh, double yaw_degrees, int res) {
  if (res < 1) throw std::invalid_argument("render_normal_map: res must be >= 1");
  NormalMap map;
  map.width = res;
  map.height = res;
  map.pixels.assign(static_cast<size_t>(res) * res, Vec3{0, 0, 0});
  std::vector<double> depth(map.pixels.size(), -kInf);

  const RigidTransform rot = RigidTransform::yaw_about_y(yaw_degrees);
  // pixel (px, py) center: x = (px+0.5)/res - 0.5, y = 0.5 - (py+0.5)/res (row 0 on top)
  for (uint32_t t = 0; t < mesh.triangles.size(); ++t) {
    Vec3 a = rot.apply(mesh.triangle_vertex(t, 0));
    Vec3 b = rot.apply(mesh.triangle_vertex(t, 1));
    Vec3 c = rot.apply(mesh.triangle_vertex(t, 2));
    Vec3 n = rot.rotate(mesh.face_normals[t]);

    double area2 = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    if (area2 == 0.0) continue;

    auto to_px = [&](double x) { return (x + 0.5) * res - 0.5; };
    auto to_py = [&](double y) { return (0.5 - y) * res - 0.5; };
    int px0 = std::max(0, static_cast<int>(std::ceil(to_px(std::min({a.x, b.x, c.x})))));
    int px1 = std::min(res - 1, static_cast<int>(std::floor(to_px(std::max({a.x, b.x, c.x})))));
    int py0 = std::max(0, static_cast<int>(std::ceil(to_py(std::max({a.y, b.y, c.y})))));
    int py1 = std::min(res - 1, static_cast<int>(std::floor(to_py(std::min({a.y, b.y, c.y})))));

    for (int py = py0; py <= py1; ++py) {
      double y = 0.5 - (py + 0.5) / res;
      for (int px = px0; px <= px1; ++px) {
        double x = (px + 0.5) / res - 0.5;
        double w0 = (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x);
        double w1 = (c.x - b.x) * (y - b.y) - (c.y - b.y) * (x - b.x);
        double w2 = (a.x - c.x) * (y - c.y) - (a.y - c.y) * (x - c.x);
        bool inside = area2 > 0.0 ? (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0)
                                  : (w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0);
        if (!inside) continue;
        // barycentric depth; camera looks down -z so larger z is nearer.
        // Depth is quantized so z-fighting between coincident surfaces
        // resolves by triangle order instead of last-bit noise.
        double l1 = w2 / area2, l2 = w0 / area2, l0 = 1.0 - l1 - l2;
        double z = l0 * a.z + l1 * b.z + l2 * c.z;
        z = std::round(z * 1e9) / 1e9;
        size_t idx = static_cast<size_t>(py) * res + px;
        if (z > depth[idx]) {
          depth[idx] = z;
          map.pixels[idx] = n;
        }
      }
    }
  }
  return map;
}

double normal_consistency(const TriangleMesh& pred, const TriangleMesh& gt, int res,
                          NormalAverage average) {
  double view_sum = 0.0;
  for (int view = 0; view < 6; ++view) {
    double yaw = 60.0 * view;
    NormalMap mp = render_normal_map(pred, yaw, res);
    NormalMap mg = render_normal_map(gt, yaw, res);
    double err = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < mp.pixels.size(); ++i) {
      bool fp = mp.pixels[i].x != 0.0 || mp.pixels[i].y != 0.0 || mp.pixels[i].z != 0.0;
      bool fg = mg.pixels[i].x != 0.0 || mg.pixels[i].y != 0.0 || mg.pixels[i].z != 0.0;
      bool use;
      switch (average) {
        case NormalAverage::ForegroundUnion: use = fp || fg; break;
        case NormalAverage::ForegroundIntersection: use = fp && fg; break;
        default: use = true; break;
      }
      if (!use) continue;
      err += norm(mp.pixels[i] - mg.pixels[i]);
      ++count;
    }
    if (count) view_sum += err / static_cast<double>(count);
  }
  return view_sum / 6.0;
}

void write_pfm(const NormalMap& map, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open output file: " + path);
  out << "PF\n" << map.width << " " << map.height << "\n-1.0\n";
  // PFM stores rows bottom-up
  for (int y = map.height - 1; y >= 0; --y) {
    for (int x = 0; x < map.width; ++x) {
      const Vec3& n = map.at(x, y);
      float rgb[3] = {static_cast<float>(n.x), static_cast<float>(n.y),
                      static_cast<float>(n.z)};
      out.write(reinterpret_cast<const char*>(rgb), sizeof(rgb));
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace tifu
