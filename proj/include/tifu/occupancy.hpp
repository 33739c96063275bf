#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tifu/bvh.hpp"

namespace tifu {

// Query axis along which a vector is measured.
enum class AxisId : uint8_t { X = 0, Y = 1, Z = 2 };

inline Vec3 axis_direction(AxisId axis) {
  switch (axis) {
    case AxisId::X: return {1.0, 0.0, 0.0};
    case AxisId::Y: return {0.0, 1.0, 0.0};
    default: return {0.0, 0.0, 1.0};
  }
}

// The two non-query axes in ascending order; fixes the row-major anchor
// layout on each cube face and the face->volume index mapping.
inline std::pair<int, int> face_axes(AxisId axis) {
  switch (axis) {
    case AxisId::X: return {1, 2};
    case AxisId::Y: return {0, 2};
    default: return {0, 1};
  }
}

// Start/end of the cube-spanning ray through x parallel to axis: x with the
// axis coordinate replaced by -0.5 / +0.5.
std::pair<Vec3, Vec3> ray_bounds(const Vec3& x, AxisId axis);

// The n evenly spaced grid points x_i = start + (i/n)(end - start), i = 1..n.
// Excludes the start point, includes the end point.
std::vector<Vec3> ray_grid_points(const Vec3& x, AxisId axis, int n);

// One ground-truth sample: n binary occupancies along the ray through anchor,
// plus the per-element minimum tri-axial span used by the adaptive mask.
// Anchors and spans are stored as f32, matching the on-disk format.
struct OccupancyVector {
  AxisId axis = AxisId::Z;
  std::array<float, 3> anchor{0.f, 0.f, 0.f};
  std::vector<uint8_t> occ;     // 0/1 per element
  std::vector<float> min_span;  // +inf where no axis has two hits

  int n() const { return static_cast<int>(occ.size()); }
  Vec3 anchor_point() const { return {anchor[0], anchor[1], anchor[2]}; }
};

enum class SamplingMode : uint8_t { FaceGrid = 0, UniformRandom = 1 };

struct DatasetMeta {
  uint32_t n = 0;
  uint32_t samples_per_axis = 0;
  SamplingMode mode = SamplingMode::FaceGrid;
  double delta = 0.05;
  uint64_t seed = 0;
};

struct VectorDataset {
  std::string mesh_id;
  DatasetMeta meta;
  std::vector<OccupancyVector> samples;
};

// Binary occupancies at the n grid points, from one sorted intersection list
// per ray (interval parity), not n containment tests.
std::vector<uint8_t> occupancy_vector(const Bvh& bvh, const Vec3& x, AxisId axis, int n);

// Minimum over the three axes of (t_last - t_first) along the cube-spanning
// ray through p; axes with fewer than two hits are skipped; +inf when no axis
// qualifies.
double min_span(const Bvh& bvh, const Vec3& p);

// Eq-style adaptive weighting: 1 on outside elements, 1 + delta/min_span on
// inside elements (infinite span contributes 0).
std::vector<double> adaptive_mask(const OccupancyVector& occ, double delta);

// Full sample (occ + min_span) for the ray through anchor.
OccupancyVector make_sample(const Bvh& bvh, const Vec3& anchor, AxisId axis, int n);

// Samples for one axis: anchors on the face orthogonal to the axis, either a
// regular samples_per_axis^2 grid (Eq-3 spacing, row-major) or seeded uniform
// random points. Deterministic for any thread count.
std::vector<OccupancyVector> generate_axis_samples(const Bvh& bvh, int n, int samples_per_axis,
                                                   SamplingMode mode, uint64_t seed, AxisId axis);

// All three axes concatenated (X block, Y block, Z block).
VectorDataset generate_dataset(const Bvh& bvh, const std::string& mesh_id, int n,
                               int samples_per_axis, SamplingMode mode, uint64_t seed,
                               double delta = 0.05);

// Occupancy-only face field for direct volume stacking: one (anchor, vector)
// per face-grid point, values 0/1 as float.
std::vector<std::pair<std::array<float, 3>, std::vector<float>>> axis_occupancy_field(
    const Bvh& bvh, AxisId axis, int face_res, int n);

// .tifuvec container, little-endian. Layout: magic "TIFV", version u32 = 1,
// N u32, sample_count u32, delta f64, seed u64, then per sample: axis u8,
// anchor 3xf32, occ bit-packed ceil(N/8) bytes (LSB first), min_span N x f32.
void write_dataset(const VectorDataset& ds, const std::string& path);
VectorDataset read_dataset(const std::string& path);

}  // namespace tifu
