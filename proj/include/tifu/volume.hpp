#pragma once

#include <array>
#include <string>
#include <vector>

#include "tifu/mesh.hpp"
#include "tifu/occupancy.hpp"

namespace tifu {

// Axis-aligned occupancy-probability grid over the canonical cube, stored
// x-fastest. Voxel (i,j,k) sits at canonical (-0.5 + (i+1)/rx, ...) per axis,
// the same spacing the ground-truth vectors use, so stacked vectors and
// volumes align exactly.
struct DenseVolume {
  int rx = 0, ry = 0, rz = 0;
  std::vector<float> data;

  DenseVolume() = default;
  DenseVolume(int x, int y, int z, float fill = 0.f)
      : rx(x), ry(y), rz(z), data(static_cast<size_t>(x) * y * z, fill) {}

  size_t index(int i, int j, int k) const {
    return static_cast<size_t>(i) + static_cast<size_t>(rx) * (static_cast<size_t>(j) +
           static_cast<size_t>(ry) * static_cast<size_t>(k));
  }
  float at(int i, int j, int k) const { return data[index(i, j, k)]; }
  float& at(int i, int j, int k) { return data[index(i, j, k)]; }
  Vec3 voxel_center(int i, int j, int k) const {
    return {-0.5 + static_cast<double>(i + 1) / rx, -0.5 + static_cast<double>(j + 1) / ry,
            -0.5 + static_cast<double>(k + 1) / rz};
  }
  bool same_resolution(const DenseVolume& o) const {
    return rx == o.rx && ry == o.ry && rz == o.rz;
  }
  double occupied_fraction(float threshold = 0.5f) const;
};

// Convex weights for combining the three axis volumes.
struct AggregationWeights {
  double alpha = 1.0 / 7.0;
  double beta = 2.0 / 7.0;
  double gamma = 4.0 / 7.0;

  void validate() const;
};

// Piecewise-linear resample of uniformly spaced samples, endpoints preserved.
template <typename T>
std::vector<T> resize_vector(const std::vector<T>& v, int m) {
  if (v.empty()) throw std::invalid_argument("resize_vector: empty input");
  if (m < 1) throw std::invalid_argument("resize_vector: target count must be >= 1");
  if (static_cast<size_t>(m) == v.size()) return v;
  std::vector<T> out(m);
  if (v.size() == 1 || m == 1) {
    std::fill(out.begin(), out.end(), v[0]);
    if (m > 1) out[m - 1] = v.back();
    return out;
  }
  const double step = static_cast<double>(v.size() - 1) / (m - 1);
  for (int j = 0; j < m; ++j) {
    double pos = j * step;
    size_t i0 = std::min(static_cast<size_t>(pos), v.size() - 2);
    double frac = pos - static_cast<double>(i0);
    out[j] = static_cast<T>((1.0 - frac) * v[i0] + frac * v[i0 + 1]);
  }
  out[m - 1] = v.back();
  return out;
}

using FaceSample = std::pair<std::array<float, 3>, std::vector<float>>;

// Lays vectors along `axis` into a dense volume. Anchors must cover the full
// face_a x face_b grid (row-major over the two non-axis coordinates in
// ascending order); each vector is resized to depth_res first.
DenseVolume stack_vectors(const std::vector<FaceSample>& samples, AxisId axis, int face_a,
                          int face_b, int depth_res);

// V = alpha*Vx + beta*Vy + gamma*Vz, elementwise.
DenseVolume aggregate(const DenseVolume& vx, const DenseVolume& vy, const DenseVolume& vz,
                      const AggregationWeights& w);

// Standard 256-case marching cubes with linear edge interpolation. The volume
// is padded with one layer of zeros so isosurfaces touching the cube faces
// close. Vertices on shared cell edges are welded; triangles are wound so
// normals point from the inside (> iso) region outward. A constant volume
// yields an empty mesh.
TriangleMesh marching_cubes(const DenseVolume& v, double iso = 0.5);

// Raw little-endian f32 payload (x-fastest) plus a JSON sidecar at
// path + ".json" carrying resolution, bounds, and the iso convention.
void write_volume(const DenseVolume& v, const std::string& path);
DenseVolume read_volume(const std::string& path);

}  // namespace tifu
