#include "doctest.h"

#include <filesystem>

#include "testutil.hpp"
#include "tifu/fixtures.hpp"
#include "tifu/metrics.hpp"
#include "tifu/volume.hpp"

using namespace tifu;
using tifu::test::TempDir;

namespace {

DenseVolume analytic_sphere_volume(int res, double radius) {
  DenseVolume v(res, res, res);
  for (int k = 0; k < res; ++k)
    for (int j = 0; j < res; ++j)
      for (int i = 0; i < res; ++i)
        v.at(i, j, k) = norm(v.voxel_center(i, j, k)) < radius ? 1.f : 0.f;
  return v;
}

PointCloud analytic_sphere_cloud(int n, double radius, uint64_t seed) {
  PointCloud cloud;
  Rng rng(seed);
  while (static_cast<int>(cloud.points.size()) < n) {
    Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    double len = norm(p);
    if (len < 1e-3 || len > 1.0) continue;
    cloud.points.push_back(p * (radius / len));
  }
  return cloud;
}

DenseVolume gt_volume(const Bvh& bvh, int res, const AggregationWeights& w = {}) {
  DenseVolume per_axis[3];
  for (int a = 0; a < 3; ++a) {
    AxisId axis = static_cast<AxisId>(a);
    per_axis[a] = stack_vectors(axis_occupancy_field(bvh, axis, res, res), axis, res, res, res);
  }
  return aggregate(per_axis[0], per_axis[1], per_axis[2], w);
}

}  // namespace

TEST_CASE("resize_vector examples") {
  CHECK(resize_vector(std::vector<double>{1, 0}, 3) == std::vector<double>{1, 0.5, 0});
  CHECK(resize_vector(std::vector<double>{0, 1, 0}, 5) ==
        std::vector<double>{0, 0.5, 1, 0.5, 0});
  std::vector<double> v{0.2, 0.9, 0.4, 0.7};
  CHECK(resize_vector(v, 4) == v);  // identity, bit-level

  SUBCASE("bounds are preserved for any target length") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> w(2 + rng.next_below(20));
      for (double& x : w) x = rng.next_double();
      double lo = *std::min_element(w.begin(), w.end());
      double hi = *std::max_element(w.begin(), w.end());
      int m = 1 + static_cast<int>(rng.next_below(50));
      auto r = resize_vector(w, m);
      REQUIRE(r.size() == static_cast<size_t>(m));
      for (double x : r) {
        CHECK(x >= lo - 1e-12);
        CHECK(x <= hi + 1e-12);
      }
      CHECK(r.front() == w.front());
      if (m > 1) CHECK(r.back() == w.back());
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(resize_vector(std::vector<double>{}, 3), std::invalid_argument);
    CHECK_THROWS_AS(resize_vector(std::vector<double>{1.0}, 0), std::invalid_argument);
  }
}

TEST_CASE("stack_vectors lays vectors along the axis") {
  SUBCASE("2x2 constant-one grid") {
    std::vector<FaceSample> samples;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        float u = static_cast<float>(-0.5 + (i + 1) / 2.0);
        float v = static_cast<float>(-0.5 + (j + 1) / 2.0);
        samples.push_back({{u, v, -0.5f}, {1.f, 1.f}});
      }
    DenseVolume vol = stack_vectors(samples, AxisId::Z, 2, 2, 2);
    for (float x : vol.data) CHECK(x == 1.f);
  }
  SUBCASE("single anchor vector along z") {
    std::vector<FaceSample> samples = {{{0.5f, 0.5f, -0.5f}, {1.f, 0.f, 1.f}}};
    DenseVolume vol = stack_vectors(samples, AxisId::Z, 1, 1, 3);
    CHECK(vol.at(0, 0, 0) == 1.f);
    CHECK(vol.at(0, 0, 1) == 0.f);
    CHECK(vol.at(0, 0, 2) == 1.f);
  }
  SUBCASE("missing anchor names the gap") {
    std::vector<FaceSample> samples = {{{0.0f, 0.0f, -0.5f}, {1.f}}};
    CHECK_THROWS_WITH_AS(stack_vectors(samples, AxisId::Z, 2, 2, 1),
                         doctest::Contains("missing anchors"), std::invalid_argument);
  }
  SUBCASE("off-grid anchor is rejected") {
    std::vector<FaceSample> samples = {{{0.11f, 0.0f, -0.5f}, {1.f}}};
    CHECK_THROWS_AS(stack_vectors(samples, AxisId::Z, 2, 2, 1), std::invalid_argument);
  }
}

TEST_CASE("stacked sphere vectors reproduce the analytic volume fraction") {
  Bvh bvh(make_icosphere(0.4, 4));
  const double analytic = 4.0 / 3.0 * 3.14159265358979 * 0.4 * 0.4 * 0.4;  // ~0.26808
  for (int a = 0; a < 3; ++a) {
    AxisId axis = static_cast<AxisId>(a);
    DenseVolume vol = stack_vectors(axis_occupancy_field(bvh, axis, 32, 32), axis, 32, 32, 32);
    CHECK(std::abs(vol.occupied_fraction() - analytic) < 0.01);
  }
}

TEST_CASE("aggregate is the weighted elementwise sum") {
  AggregationWeights w;  // 1/7, 2/7, 4/7
  SUBCASE("convex-combination identity at 1e-9") {
    DenseVolume v(4, 4, 4);
    Rng rng(8);
    for (float& x : v.data) x = static_cast<float>(rng.next_double());
    DenseVolume out = aggregate(v, v, v, w);
    for (size_t i = 0; i < v.data.size(); ++i)
      CHECK(std::abs(static_cast<double>(out.data[i]) - v.data[i]) < 1e-9);
  }
  SUBCASE("constant volumes hit the weight arithmetic") {
    DenseVolume ones(3, 3, 3, 1.f), zeros(3, 3, 3, 0.f);
    DenseVolume out = aggregate(ones, zeros, zeros, w);
    for (float x : out.data) CHECK(x == doctest::Approx(1.0 / 7.0));
  }
  SUBCASE("resolution mismatch is an error") {
    DenseVolume a(2, 2, 2), b(2, 2, 3);
    CHECK_THROWS_AS(aggregate(a, a, b, w), std::invalid_argument);
  }
  SUBCASE("weights must be convex") {
    AggregationWeights bad{0.5, 0.5, 0.5};
    DenseVolume v(2, 2, 2);
    CHECK_THROWS_AS(aggregate(v, v, v, bad), std::invalid_argument);
  }
  SUBCASE("linearity under scalar scaling") {
    DenseVolume a(3, 3, 3), b(3, 3, 3), c(3, 3, 3);
    Rng rng(12);
    for (auto* v : {&a, &b, &c})
      for (float& x : v->data) x = static_cast<float>(rng.next_double());
    DenseVolume full = aggregate(a, b, c, w);
    DenseVolume half_a = a, half_b = b, half_c = c;
    for (auto* v : {&half_a, &half_b, &half_c})
      for (float& x : v->data) x *= 0.5f;
    DenseVolume half = aggregate(half_a, half_b, half_c, w);
    for (size_t i = 0; i < full.data.size(); ++i)
      CHECK(half.data[i] == doctest::Approx(0.5 * full.data[i]).epsilon(1e-6));
  }
}

TEST_CASE("marching_cubes: constant volumes yield an empty mesh") {
  DenseVolume zeros(8, 8, 8, 0.f);
  CHECK(marching_cubes(zeros).empty());
  DenseVolume ones(8, 8, 8, 1.f);
  // all-ones still emits the boundary shell against the zero padding
  TriangleMesh shell = marching_cubes(ones);
  CHECK_FALSE(shell.empty());
  CHECK(is_watertight(shell));
}

TEST_CASE("marching_cubes on the analytic sphere volume") {
  DenseVolume v = analytic_sphere_volume(64, 0.4);
  TriangleMesh mesh = marching_cubes(v, 0.5);
  REQUIRE_FALSE(mesh.empty());
  CHECK(is_watertight(mesh));

  PointCloud mc_cloud = sample_surface(mesh, 20000, 4);
  PointCloud sphere_cloud = analytic_sphere_cloud(20000, 0.4, 5);
  double d = chamfer(mc_cloud, sphere_cloud);
  CHECK(d < 2.0 / 64.0);  // two voxel lengths

  SUBCASE("outward orientation") {
    double mean_dot = 0.0;
    for (uint32_t t = 0; t < mesh.triangles.size(); ++t) {
      Vec3 c = (mesh.triangle_vertex(t, 0) + mesh.triangle_vertex(t, 1) +
                mesh.triangle_vertex(t, 2)) / 3.0;
      mean_dot += dot(mesh.face_normals[t], normalized(c));
    }
    mean_dot /= static_cast<double>(mesh.triangles.size());
    CHECK(mean_dot > 0.8);
  }

  SUBCASE("sign-flipped volume gives the same surface with flipped normals") {
    // the global flip also turns the padded exterior into a solid, so
    // compare only the sphere surface and ignore the outer boundary shell
    DenseVolume flipped = v;
    for (float& x : flipped.data) x = 1.f - x;
    TriangleMesh anti = marching_cubes(flipped, 0.5);
    auto sphere_vertices = [](const TriangleMesh& m) {
      std::vector<Vec3> vs;
      for (const Vec3& p : m.vertices)
        if (norm(p) < 0.46) vs.push_back(p);
      std::sort(vs.begin(), vs.end(), [](const Vec3& a, const Vec3& b) {
        return std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z);
      });
      return vs;
    };
    std::vector<Vec3> va = sphere_vertices(mesh), vb = sphere_vertices(anti);
    REQUIRE(va.size() == vb.size());
    for (size_t i = 0; i < va.size(); ++i) CHECK(norm(va[i] - vb[i]) == 0.0);
    double mean_dot = 0.0;
    size_t counted = 0;
    for (uint32_t t = 0; t < anti.triangles.size(); ++t) {
      Vec3 c = (anti.triangle_vertex(t, 0) + anti.triangle_vertex(t, 1) +
                anti.triangle_vertex(t, 2)) / 3.0;
      if (norm(c) >= 0.46) continue;
      mean_dot += dot(anti.face_normals[t], normalized(c));
      ++counted;
    }
    CHECK(mean_dot / static_cast<double>(counted) < -0.8);
  }

  SUBCASE("iso level must be inside (0,1)") {
    CHECK_THROWS_AS(marching_cubes(v, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(marching_cubes(v, 1.0), std::invalid_argument);
  }
}

TEST_CASE("shapes touching the cube boundary still close") {
  // bar spanning the full cube along x; the zero padding closes the open ends
  DenseVolume v(16, 16, 16, 0.f);
  for (int k = 6; k < 10; ++k)
    for (int j = 6; j < 10; ++j)
      for (int i = 0; i < 16; ++i) v.at(i, j, k) = 1.f;
  TriangleMesh mesh = marching_cubes(v, 0.5);
  CHECK_FALSE(mesh.empty());
  CHECK(is_watertight(mesh));
}

TEST_CASE("gt stacking self-consistency improves with resolution") {
  Bvh bvh(make_icosphere(0.4, 4));
  PointCloud reference = sample_surface(bvh.mesh(), 8000, 21);
  double previous = 1e9;
  for (int res : {16, 32, 64}) {
    TriangleMesh mesh = marching_cubes(gt_volume(bvh, res), 0.5);
    double d = chamfer(sample_surface(mesh, 8000, 22), reference);
    CHECK(d < previous);
    previous = d;
  }
}

TEST_CASE("volume file round-trip") {
  TempDir dir;
  DenseVolume v(2, 2, 2);
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(i) / 8.f;
  std::string path = dir.file("v.vol");
  write_volume(v, path);
  CHECK(std::filesystem::file_size(path) == 32);  // 8 voxels x 4 bytes
  CHECK(std::filesystem::exists(path + ".json"));

  DenseVolume back = read_volume(path);
  CHECK(back.same_resolution(v));
  CHECK(back.data == v.data);

  SUBCASE("truncated payload is rejected") {
    std::string bytes = tifu::test::read_file(path);
    bytes.resize(bytes.size() - 4);
    tifu::test::write_file(path, bytes);
    CHECK_THROWS_WITH_AS(read_volume(path), doctest::Contains("payload size"), ParseError);
  }
  SUBCASE("oversized payload is rejected") {
    std::string bytes = tifu::test::read_file(path);
    bytes += "XXXX";
    tifu::test::write_file(path, bytes);
    CHECK_THROWS_AS(read_volume(path), ParseError);
  }
  SUBCASE("missing sidecar is an I/O error") {
    std::filesystem::remove(path + ".json");
    CHECK_THROWS_AS(read_volume(path), IoError);
  }
}
