#include "tifu/volume.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "nlohmann/json.hpp"
#include "tifu/mc_tables.hpp"
#include "tifu/parallel.hpp"

namespace tifu {

double DenseVolume::occupied_fraction(float threshold) const {
  if (data.empty()) return 0.0;
  size_t count = 0;
  for (float v : data)
    if (v > threshold) ++count;
  return static_cast<double>(count) / static_cast<double>(data.size());
}

void AggregationWeights::validate() const {
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
    throw std::invalid_argument("aggregation weights must be non-negative");
  if (std::abs(alpha + beta + gamma - 1.0) > 1e-9)
    throw std::invalid_argument("aggregation weights must sum to 1");
}

DenseVolume stack_vectors(const std::vector<FaceSample>& samples, AxisId axis, int face_a,
                          int face_b, int depth_res) {
  if (face_a < 1 || face_b < 1 || depth_res < 1)
    throw std::invalid_argument("stack_vectors: resolutions must be >= 1");
  const auto [u, v] = face_axes(axis);

  // map each sample to its face slot
  std::vector<int32_t> slot_of_sample(samples.size(), -1);
  std::vector<uint8_t> filled(static_cast<size_t>(face_a) * face_b, 0);
  for (size_t s = 0; s < samples.size(); ++s) {
    const auto& anchor = samples[s].first;
    double cu = anchor[u], cv = anchor[v];
    int i = static_cast<int>(std::lround((cu + 0.5) * face_a - 1.0));
    int j = static_cast<int>(std::lround((cv + 0.5) * face_b - 1.0));
    if (i < 0 || i >= face_a || j < 0 || j >= face_b ||
        std::abs(cu - (-0.5 + static_cast<double>(i + 1) / face_a)) > 0.25 / face_a ||
        std::abs(cv - (-0.5 + static_cast<double>(j + 1) / face_b)) > 0.25 / face_b)
      throw std::invalid_argument("stack_vectors: anchor off the face grid");
    size_t slot = static_cast<size_t>(i) * face_b + j;
    if (filled[slot]) throw std::invalid_argument("stack_vectors: duplicate anchor on the grid");
    filled[slot] = 1;
    slot_of_sample[s] = static_cast<int32_t>(slot);
  }
  std::string gaps;
  for (size_t slot = 0; slot < filled.size(); ++slot) {
    if (filled[slot]) continue;
    if (!gaps.empty()) gaps += ", ";
    gaps += "(" + std::to_string(slot / face_b) + "," + std::to_string(slot % face_b) + ")";
    if (gaps.size() > 120) {
      gaps += ", ...";
      break;
    }
  }
  if (!gaps.empty()) throw std::invalid_argument("stack_vectors: missing anchors at " + gaps);

  int rx, ry, rz;
  switch (axis) {
    case AxisId::X: rx = depth_res; ry = face_a; rz = face_b; break;
    case AxisId::Y: rx = face_a; ry = depth_res; rz = face_b; break;
    default:        rx = face_a; ry = face_b; rz = depth_res; break;
  }
  DenseVolume vol(rx, ry, rz);
  parallel_for(samples.size(), [&](size_t begin, size_t end) {
    for (size_t s = begin; s < end; ++s) {
      std::vector<float> column = resize_vector(samples[s].second, depth_res);
      int i = slot_of_sample[s] / face_b, j = slot_of_sample[s] % face_b;
      for (int k = 0; k < depth_res; ++k) {
        switch (axis) {
          case AxisId::X: vol.at(k, i, j) = column[k]; break;
          case AxisId::Y: vol.at(i, k, j) = column[k]; break;
          default:        vol.at(i, j, k) = column[k]; break;
        }
      }
    }
  });
  return vol;
}

DenseVolume aggregate(const DenseVolume& vx, const DenseVolume& vy, const DenseVolume& vz,
                      const AggregationWeights& w) {
  w.validate();
  if (!vx.same_resolution(vy) || !vx.same_resolution(vz))
    throw std::invalid_argument("aggregate: volume resolutions differ");
  DenseVolume out(vx.rx, vx.ry, vx.rz);
  parallel_for(out.data.size(), [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i)
      out.data[i] = static_cast<float>(w.alpha * vx.data[i] + w.beta * vy.data[i] +
                                       w.gamma * vz.data[i]);
  });
  return out;
}

namespace {

// Cube corner offsets (Bourke numbering): bits select (di, dj, dk).
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 0, 1}, {0, 0, 1},
                               {0, 1, 0}, {1, 1, 0}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                     {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

struct McVertex {
  uint64_t key;
  Vec3 position;
};

struct McTriangle {
  McVertex corner[3];
};

}  // namespace

TriangleMesh marching_cubes(const DenseVolume& vol, double iso) {
  if (!(iso > 0.0 && iso < 1.0)) throw std::invalid_argument("marching_cubes: iso must be in (0,1)");
  TriangleMesh mesh;
  if (vol.data.empty()) return mesh;

  // Lattice = volume padded with one zero layer on every side.
  const int lx = vol.rx + 2, ly = vol.ry + 2, lz = vol.rz + 2;
  auto value = [&](int I, int J, int K) -> double {
    if (I <= 0 || J <= 0 || K <= 0 || I > vol.rx || J > vol.ry || K > vol.rz) return 0.0;
    return vol.at(I - 1, J - 1, K - 1);
  };
  auto position = [&](int I, int J, int K) -> Vec3 {
    return {-0.5 + static_cast<double>(I) / vol.rx, -0.5 + static_cast<double>(J) / vol.ry,
            -0.5 + static_cast<double>(K) / vol.rz};
  };
  auto edge_key = [&](int I, int J, int K, int axis) -> uint64_t {
    return ((static_cast<uint64_t>(axis) * lz + K) * ly + J) * lx + I;
  };

  // Slice-parallel sweep; per-slice triangle buffers keep the output
  // independent of the thread count.
  std::vector<std::vector<McTriangle>> slices(static_cast<size_t>(lz) - 1);
  parallel_for(slices.size(), [&](size_t begin, size_t end) {
    for (size_t K = begin; K < end; ++K) {
      auto& out = slices[K];
      for (int J = 0; J + 1 < ly; ++J) {
        for (int I = 0; I + 1 < lx; ++I) {
          double corner_value[8];
          int cube_index = 0;
          for (int c = 0; c < 8; ++c) {
            corner_value[c] =
                value(I + kCorner[c][0], J + kCorner[c][1], static_cast<int>(K) + kCorner[c][2]);
            if (corner_value[c] < iso) cube_index |= 1 << c;
          }
          const uint16_t edges = kMcEdges[cube_index];
          if (edges == 0) continue;

          McVertex edge_vertex[12];
          for (int e = 0; e < 12; ++e) {
            if (!(edges & (1u << e))) continue;
            const int c0 = kEdgeCorners[e][0], c1 = kEdgeCorners[e][1];
            const int p0[3] = {I + kCorner[c0][0], J + kCorner[c0][1],
                               static_cast<int>(K) + kCorner[c0][2]};
            const int p1[3] = {I + kCorner[c1][0], J + kCorner[c1][1],
                               static_cast<int>(K) + kCorner[c1][2]};
            int axis = p0[0] != p1[0] ? 0 : (p0[1] != p1[1] ? 1 : 2);
            const int* lo = p0[axis] <= p1[axis] ? p0 : p1;
            double v_lo = value(lo[0], lo[1], lo[2]);
            int hi_coord[3] = {lo[0], lo[1], lo[2]};
            hi_coord[axis] += 1;
            double v_hi = value(hi_coord[0], hi_coord[1], hi_coord[2]);
            double mu = v_hi == v_lo ? 0.5 : (iso - v_lo) / (v_hi - v_lo);
            mu = std::clamp(mu, 0.0, 1.0);
            Vec3 a = position(lo[0], lo[1], lo[2]);
            Vec3 b = position(hi_coord[0], hi_coord[1], hi_coord[2]);
            edge_vertex[e] = {edge_key(lo[0], lo[1], lo[2], axis), a + (b - a) * mu};
          }
          const int8_t* tri = kMcTriangles[cube_index];
          for (int n = 0; tri[n] != -1; n += 3) {
            // Table winding faces the below-iso region; swap two corners so
            // normals point from the inside (> iso) region outward.
            out.push_back({{edge_vertex[tri[n]], edge_vertex[tri[n + 2]],
                            edge_vertex[tri[n + 1]]}});
          }
        }
      }
    }
  });

  std::unordered_map<uint64_t, uint32_t> vertex_index;
  for (const auto& slice : slices) {
    for (const McTriangle& t : slice) {
      Triangle indices;
      for (int c = 0; c < 3; ++c) {
        auto [it, inserted] = vertex_index.try_emplace(t.corner[c].key, 0u);
        if (inserted) {
          it->second = static_cast<uint32_t>(mesh.vertices.size());
          mesh.vertices.push_back(t.corner[c].position);
        }
        indices[c] = it->second;
      }
      mesh.triangles.push_back(indices);
    }
  }
  mesh.update_normals();
  return mesh;
}

void write_volume(const DenseVolume& v, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open output file: " + path);
  out.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path);

  nlohmann::json header = {
      {"resolution", {v.rx, v.ry, v.rz}},
      {"bounds", {{"min", {-0.5, -0.5, -0.5}}, {"max", {0.5, 0.5, 0.5}}}},
      {"order", "x-fastest"},
      {"iso", 0.5},
  };
  std::ofstream side(path + ".json");
  if (!side) throw IoError("cannot open output file: " + path + ".json");
  side << header.dump(2) << "\n";
  if (!side) throw IoError("write failed: " + path + ".json");
}

DenseVolume read_volume(const std::string& path) {
  std::ifstream side(path + ".json");
  if (!side) throw IoError("cannot open volume header: " + path + ".json");
  nlohmann::json header;
  try {
    side >> header;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ".json: " + e.what());
  }
  if (!header.contains("resolution") || header["resolution"].size() != 3)
    throw ParseError(path + ".json: missing resolution");

  DenseVolume v;
  v.rx = header["resolution"][0].get<int>();
  v.ry = header["resolution"][1].get<int>();
  v.rz = header["resolution"][2].get<int>();
  if (v.rx < 1 || v.ry < 1 || v.rz < 1) throw ParseError(path + ".json: bad resolution");

  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open volume payload: " + path);
  const size_t expected = static_cast<size_t>(v.rx) * v.ry * v.rz;
  v.data.resize(expected);
  in.read(reinterpret_cast<char*>(v.data.data()),
          static_cast<std::streamsize>(expected * sizeof(float)));
  if (static_cast<size_t>(in.gcount()) != expected * sizeof(float))
    throw ParseError(path + ": payload size does not match header resolution");
  char extra;
  if (in.read(&extra, 1))
    throw ParseError(path + ": payload size does not match header resolution");
  return v;
}

}  // namespace tifu
