#include "tifu/occupancy.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tifu/parallel.hpp"

static_assert(std::endian::native == std::endian::little, "serialization assumes little-endian");

namespace tifu {

namespace {

// Rays start 0.05 before the cube face so geometry touching the face still
// produces strictly positive hit t.
constexpr double kRayBackoff = 0.05;

// Sorted, deduplicated hits along the full cube-spanning line through p
// parallel to axis. Odd total parity on a watertight mesh means an
// edge/vertex graze; re-cast with the origin jittered along both
// perpendicular axes.
std::vector<RayHit> full_axis_hits(const Bvh& bvh, const Vec3& p, AxisId axis,
                                   double* origin_coord = nullptr) {
  const Vec3 dir = axis_direction(axis);
  const auto [u, v] = face_axes(axis);
  const int a = static_cast<int>(axis);

  static constexpr double kJitterScale[5] = {0.0, 1.0, -1.0, 2.0, -2.0};
  std::vector<RayHit> hits;
  for (double scale : kJitterScale) {
    Vec3 origin = p;
    origin[a] = -0.5 - kRayBackoff;
    origin[u] += scale * 1e-7;
    origin[v] += scale * 1e-7;
    hits = bvh.ray_intersections(origin, dir);
    if (hits.size() % 2 == 0) break;
  }
  if (origin_coord) *origin_coord = -0.5 - kRayBackoff;
  return hits;
}

double span_from_hits(const std::vector<RayHit>& hits) {
  if (hits.size() < 2) return kInf;
  return hits.back().t - hits.front().t;
}

Vec3 anchor_as_double(const std::array<float, 3>& a) {
  return {static_cast<double>(a[0]), static_cast<double>(a[1]), static_cast<double>(a[2])};
}

std::vector<uint8_t> occupancy_from_hits(const std::vector<RayHit>& hits, int n,
                                         double origin_coord) {
  std::vector<uint8_t> occ(n, 0);
  size_t cursor = 0;
  size_t crossings = 0;
  for (int k = 0; k < n; ++k) {
    // grid point i = k+1 of Eq-3: axis coordinate -0.5 + (k+1)/n
    const double t_point = (-0.5 + static_cast<double>(k + 1) / n) - origin_coord;
    while (cursor < hits.size() && hits[cursor].t < t_point) {
      ++cursor;
      ++crossings;
    }
    occ[k] = static_cast<uint8_t>(crossings % 2);
  }
  return occ;
}

std::array<float, 3> to_anchor(const Vec3& p) {
  return {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)};
}

}  // namespace

std::pair<Vec3, Vec3> ray_bounds(const Vec3& x, AxisId axis) {
  Vec3 start = x, end = x;
  start[static_cast<int>(axis)] = -0.5;
  end[static_cast<int>(axis)] = 0.5;
  return {start, end};
}

std::vector<Vec3> ray_grid_points(const Vec3& x, AxisId axis, int n) {
  if (n < 1) throw std::invalid_argument("ray_grid_points: n must be >= 1");
  auto [start, end] = ray_bounds(x, axis);
  std::vector<Vec3> points(n);
  const Vec3 span = end - start;
  for (int i = 1; i <= n; ++i)
    points[i - 1] = start + span * (static_cast<double>(i) / n);
  return points;
}

std::vector<uint8_t> occupancy_vector(const Bvh& bvh, const Vec3& x, AxisId axis, int n) {
  if (n < 1) throw std::invalid_argument("occupancy_vector: n must be >= 1");
  double origin_coord;
  std::vector<RayHit> hits = full_axis_hits(bvh, x, axis, &origin_coord);
  return occupancy_from_hits(hits, n, origin_coord);
}

double min_span(const Bvh& bvh, const Vec3& p) {
  double best = kInf;
  for (AxisId axis : {AxisId::X, AxisId::Y, AxisId::Z})
    best = std::min(best, span_from_hits(full_axis_hits(bvh, p, axis)));
  return best;
}

std::vector<double> adaptive_mask(const OccupancyVector& occ, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("adaptive_mask: delta must be > 0");
  if (occ.min_span.size() != occ.occ.size())
    throw std::invalid_argument("adaptive_mask: min_span not populated");
  std::vector<double> mask(occ.occ.size(), 1.0);
  for (size_t i = 0; i < occ.occ.size(); ++i)
    if (occ.occ[i]) mask[i] = 1.0 + delta / static_cast<double>(occ.min_span[i]);
  return mask;
}

OccupancyVector make_sample(const Bvh& bvh, const Vec3& anchor, AxisId axis, int n) {
  OccupancyVector sample;
  sample.axis = axis;
  sample.anchor = to_anchor(anchor);
  const Vec3 a = anchor_as_double(sample.anchor);  // compute from the stored f32 anchor

  double origin_coord;
  std::vector<RayHit> own_hits = full_axis_hits(bvh, a, axis, &origin_coord);
  sample.occ = occupancy_from_hits(own_hits, n, origin_coord);

  const double own_span = span_from_hits(own_hits);
  const auto [u, v] = face_axes(axis);
  const int ax = static_cast<int>(axis);
  sample.min_span.resize(n);
  for (int k = 0; k < n; ++k) {
    Vec3 p = a;
    p[ax] = -0.5 + static_cast<double>(k + 1) / n;
    double span = own_span;
    span = std::min(span, span_from_hits(full_axis_hits(bvh, p, static_cast<AxisId>(u))));
    span = std::min(span, span_from_hits(full_axis_hits(bvh, p, static_cast<AxisId>(v))));
    sample.min_span[k] = static_cast<float>(span);
  }
  return sample;
}

std::vector<OccupancyVector> generate_axis_samples(const Bvh& bvh, int n, int samples_per_axis,
                                                   SamplingMode mode, uint64_t seed, AxisId axis) {
  if (n < 1 || samples_per_axis < 1)
    throw std::invalid_argument("generate_axis_samples: counts must be >= 1");

  const auto [u, v] = face_axes(axis);
  const int a = samples_per_axis;
  std::vector<Vec3> anchors;
  anchors.reserve(static_cast<size_t>(a) * a);
  if (mode == SamplingMode::FaceGrid) {
    for (int i = 0; i < a; ++i) {
      for (int j = 0; j < a; ++j) {
        Vec3 p{0, 0, 0};
        p[static_cast<int>(axis)] = -0.5;
        p[u] = -0.5 + static_cast<double>(i + 1) / a;
        p[v] = -0.5 + static_cast<double>(j + 1) / a;
        anchors.push_back(p);
      }
    }
  } else {
    Rng rng(seed ^ (0x517CC1B727220A95ULL * (static_cast<uint64_t>(axis) + 1)));
    for (int i = 0; i < a * a; ++i) {
      Vec3 p{0, 0, 0};
      p[static_cast<int>(axis)] = -0.5;
      p[u] = rng.uniform(-0.5, 0.5);
      p[v] = rng.uniform(-0.5, 0.5);
      anchors.push_back(p);
    }
  }

  std::vector<OccupancyVector> samples(anchors.size());
  parallel_for(anchors.size(), [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) samples[i] = make_sample(bvh, anchors[i], axis, n);
  });
  return samples;
}

VectorDataset generate_dataset(const Bvh& bvh, const std::string& mesh_id, int n,
                               int samples_per_axis, SamplingMode mode, uint64_t seed,
                               double delta) {
  VectorDataset ds;
  ds.mesh_id = mesh_id;
  ds.meta = {static_cast<uint32_t>(n), static_cast<uint32_t>(samples_per_axis), mode, delta, seed};
  for (AxisId axis : {AxisId::X, AxisId::Y, AxisId::Z}) {
    auto block = generate_axis_samples(bvh, n, samples_per_axis, mode, seed, axis);
    ds.samples.insert(ds.samples.end(), std::make_move_iterator(block.begin()),
                      std::make_move_iterator(block.end()));
  }
  return ds;
}

std::vector<std::pair<std::array<float, 3>, std::vector<float>>> axis_occupancy_field(
    const Bvh& bvh, AxisId axis, int face_res, int n) {
  const auto [u, v] = face_axes(axis);
  const int a = face_res;
  std::vector<std::pair<std::array<float, 3>, std::vector<float>>> field(
      static_cast<size_t>(a) * a);
  parallel_for(field.size(), [&](size_t begin, size_t end) {
    for (size_t s = begin; s < end; ++s) {
      int i = static_cast<int>(s) / a, j = static_cast<int>(s) % a;
      Vec3 p{0, 0, 0};
      p[static_cast<int>(axis)] = -0.5;
      p[u] = -0.5 + static_cast<double>(i + 1) / a;
      p[v] = -0.5 + static_cast<double>(j + 1) / a;
      auto occ = occupancy_vector(bvh, p, axis, n);
      std::vector<float> values(occ.begin(), occ.end());
      field[s] = {to_anchor(p), std::move(values)};
    }
  });
  return field;
}

namespace {

template <typename T>
void write_raw(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_raw(std::ifstream& in, T& value, const std::string& path) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ParseError(path + ": truncated file");
}

}  // namespace

void write_dataset(const VectorDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open output file: " + path);
  out.write("TIFV", 4);
  write_raw(out, static_cast<uint32_t>(1));
  write_raw(out, ds.meta.n);
  write_raw(out, static_cast<uint32_t>(ds.samples.size()));
  write_raw(out, ds.meta.delta);
  write_raw(out, ds.meta.seed);

  const size_t packed = (ds.meta.n + 7) / 8;
  std::vector<uint8_t> bits(packed);
  for (const OccupancyVector& s : ds.samples) {
    if (s.occ.size() != ds.meta.n || s.min_span.size() != ds.meta.n)
      throw std::invalid_argument("write_dataset: sample length differs from meta.N");
    write_raw(out, static_cast<uint8_t>(s.axis));
    out.write(reinterpret_cast<const char*>(s.anchor.data()), 3 * sizeof(float));
    std::fill(bits.begin(), bits.end(), 0);
    for (uint32_t i = 0; i < ds.meta.n; ++i)
      if (s.occ[i]) bits[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
    out.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(packed));
    out.write(reinterpret_cast<const char*>(s.min_span.data()),
              static_cast<std::streamsize>(ds.meta.n * sizeof(float)));
  }
  if (!out) throw IoError("write failed: " + path);
}

VectorDataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TIFV", 4) != 0) throw ParseError(path + ": bad magic");
  uint32_t version;
  read_raw(in, version, path);
  if (version != 1)
    throw ParseError(path + ": unsupported version " + std::to_string(version));

  VectorDataset ds;
  uint32_t sample_count;
  read_raw(in, ds.meta.n, path);
  read_raw(in, sample_count, path);
  read_raw(in, ds.meta.delta, path);
  read_raw(in, ds.meta.seed, path);

  const size_t packed = (ds.meta.n + 7) / 8;
  std::vector<uint8_t> bits(packed);
  ds.samples.resize(sample_count);
  for (OccupancyVector& s : ds.samples) {
    uint8_t axis;
    read_raw(in, axis, path);
    if (axis > 2) throw ParseError(path + ": invalid axis tag");
    s.axis = static_cast<AxisId>(axis);
    in.read(reinterpret_cast<char*>(s.anchor.data()), 3 * sizeof(float));
    in.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(packed));
    s.occ.resize(ds.meta.n);
    for (uint32_t i = 0; i < ds.meta.n; ++i)
      s.occ[i] = (bits[i / 8] >> (i % 8)) & 1u;
    s.min_span.resize(ds.meta.n);
    in.read(reinterpret_cast<char*>(s.min_span.data()),
            static_cast<std::streamsize>(ds.meta.n * sizeof(float)));
    if (!in) throw ParseError(path + ": truncated file");
  }
  return ds;
}

}  // namespace tifu
