#include "tifu/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>

#include "nlohmann/json.hpp"
#include "tifu/parallel.hpp"

static_assert(std::endian::native == std::endian::little, "serialization assumes little-endian");

namespace tifu {

namespace {

constexpr double kClampEps = 1e-7;
constexpr double kLeakySlope = 0.01;
constexpr size_t kGradBlocks = 4;  // fixed so reductions are thread-count independent

const char* axis_name(int a) { return a == 0 ? "x" : (a == 1 ? "y" : "z"); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

void linear_forward(std::span<const double> w, std::span<const double> b,
                    std::span<const double> x, std::span<double> y) {
  const size_t in = x.size(), out = y.size();
  for (size_t o = 0; o < out; ++o) {
    double acc = b[o];
    const double* row = w.data() + o * in;
    for (size_t i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

// dw += dy x^T, db += dy, dx = W^T dy (overwritten; pass empty to skip)
void linear_backward(std::span<const double> w, std::span<const double> x,
                     std::span<const double> dy, std::span<double> dw, std::span<double> db,
                     std::span<double> dx) {
  const size_t in = x.size(), out = dy.size();
  for (size_t o = 0; o < out; ++o) {
    const double g = dy[o];
    db[o] += g;
    double* drow = dw.data() + o * in;
    for (size_t i = 0; i < in; ++i) drow[i] += g * x[i];
  }
  if (!dx.empty()) {
    std::fill(dx.begin(), dx.end(), 0.0);
    for (size_t o = 0; o < out; ++o) {
      const double g = dy[o];
      const double* row = w.data() + o * in;
      for (size_t i = 0; i < in; ++i) dx[i] += row[i] * g;
    }
  }
}

void leaky_relu(std::span<const double> z, std::span<double> a) {
  for (size_t i = 0; i < z.size(); ++i) a[i] = z[i] >= 0.0 ? z[i] : kLeakySlope * z[i];
}

void leaky_relu_backward(std::span<const double> z, std::span<const double> da,
                         std::span<double> dz) {
  for (size_t i = 0; i < z.size(); ++i) dz[i] = da[i] * (z[i] >= 0.0 ? 1.0 : kLeakySlope);
}

struct GridCache {
  size_t corner[8];
  double weight[8];
  int corners = 0;
};

// Trilinear interpolation over an R^3 lattice spanning [-0.5, 0.5]^3 with C
// channels per point, boundary clamped.
void trilinear_cache(int res, int channels, const Vec3& p, GridCache& cache) {
  double g[3];
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    g[a] = (p[a] + 0.5) * (res - 1);
    g[a] = std::clamp(g[a], 0.0, static_cast<double>(res - 1));
    i0[a] = std::min(static_cast<int>(g[a]), res - 2);
    f[a] = g[a] - i0[a];
  }
  cache.corners = 8;
  for (int c = 0; c < 8; ++c) {
    int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    size_t idx = ((static_cast<size_t>(i0[0] + dx) * res + (i0[1] + dy)) * res + (i0[2] + dz)) *
                 channels;
    cache.corner[c] = idx;
    cache.weight[c] = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) *
                      (dz ? f[2] : 1.0 - f[2]);
  }
}

// Bilinear over a P^2 lattice on the (x, y) face.
void bilinear_cache(int res, int channels, double px, double py, GridCache& cache) {
  double g[2] = {(px + 0.5) * (res - 1), (py + 0.5) * (res - 1)};
  int i0[2];
  double f[2];
  for (int a = 0; a < 2; ++a) {
    g[a] = std::clamp(g[a], 0.0, static_cast<double>(res - 1));
    i0[a] = std::min(static_cast<int>(g[a]), res - 2);
    f[a] = g[a] - i0[a];
  }
  cache.corners = 4;
  for (int c = 0; c < 4; ++c) {
    int dx = c & 1, dy = (c >> 1) & 1;
    cache.corner[c] = (static_cast<size_t>(i0[0] + dx) * res + (i0[1] + dy)) * channels;
    cache.weight[c] = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]);
  }
}

void grid_gather(std::span<const double> grid, const GridCache& cache, int channels,
                 double* out) {
  std::fill(out, out + channels, 0.0);
  for (int c = 0; c < cache.corners; ++c) {
    const double w = cache.weight[c];
    const double* src = grid.data() + cache.corner[c];
    for (int ch = 0; ch < channels; ++ch) out[ch] += w * src[ch];
  }
}

void grid_scatter(std::span<double> grid_grad, const GridCache& cache, int channels,
                  const double* d_out) {
  for (int c = 0; c < cache.corners; ++c) {
    const double w = cache.weight[c];
    double* dst = grid_grad.data() + cache.corner[c];
    for (int ch = 0; ch < channels; ++ch) dst[ch] += w * d_out[ch];
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (n_coarse < 1 || n_fine < n_coarse)
    throw std::invalid_argument("model config: need n_fine >= n_coarse >= 1");
  if (grid_res < 2 || fine_res < 2 || grid_channels < 1 || fine_channels < 1 || stations < 1 ||
      hidden < 1 || omega_dim < 1)
    throw std::invalid_argument("model config: dimensions must be positive (grids >= 2)");
  if (batch_size < 1 || steps < 0) throw std::invalid_argument("model config: bad optimizer setup");
  weights.validate();
  if (!(delta > 0.0)) throw std::invalid_argument("model config: delta must be > 0");
}

TensorRef Decoder::add_tensor(const std::string& name, std::vector<int> shape) {
  TensorRef t;
  t.name = name;
  t.shape = std::move(shape);
  t.size = 1;
  for (int d : t.shape) t.size *= static_cast<size_t>(d);
  t.offset = params_.size();
  params_.resize(params_.size() + t.size, 0.0);
  tensors_.push_back(t);
  return t;
}

Decoder::Decoder(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int feat = cfg_.feature_dim();
  add_tensor("coarse_grid", {cfg_.grid_res, cfg_.grid_res, cfg_.grid_res, cfg_.grid_channels});
  add_tensor("fine_grid", {cfg_.fine_res, cfg_.fine_res, cfg_.fine_channels});
  for (int a = 0; a < 3; ++a) {
    std::string g = std::string("g_") + axis_name(a);
    add_tensor(g + ".w0", {cfg_.hidden, feat});
    add_tensor(g + ".b0", {cfg_.hidden});
    add_tensor(g + ".w1", {cfg_.hidden, cfg_.hidden});
    add_tensor(g + ".b1", {cfg_.hidden});
    add_tensor(g + ".w2", {cfg_.n_coarse, cfg_.hidden});
    add_tensor(g + ".b2", {cfg_.n_coarse});
  }
  add_tensor("omega.w", {cfg_.omega_dim, cfg_.hidden});
  add_tensor("omega.b", {cfg_.omega_dim});
  add_tensor("fine.w0", {cfg_.hidden, cfg_.fine_input_dim()});
  add_tensor("fine.b0", {cfg_.hidden});
  add_tensor("fine.w1", {cfg_.n_fine, cfg_.hidden});
  add_tensor("fine.b1", {cfg_.n_fine});
}

const TensorRef& Decoder::tensor(const std::string& name) const {
  for (const TensorRef& t : tensors_)
    if (t.name == name) return t;
  throw std::invalid_argument("unknown tensor: " + name);
}

void Decoder::init_params(uint64_t seed) {
  Rng rng(seed ^ 0xD1B54A32D192ED03ULL);
  for (const TensorRef& t : tensors_) {
    std::span<double> v{params_.data() + t.offset, t.size};
    if (t.name == "coarse_grid" || t.name == "fine_grid") {
      for (double& x : v) x = rng.uniform(-0.1, 0.1);
    } else if (t.shape.size() == 2) {  // weight matrix: He-style uniform on fan-in
      double limit = std::sqrt(6.0 / t.shape[1]);
      for (double& x : v) x = rng.uniform(-limit, limit);
    } else {  // bias
      std::fill(v.begin(), v.end(), 0.0);
    }
  }
}

// ---------------------------------------------------------------------------
// forward/backward kernels

struct DecoderKernels {
  struct CoarseWs {
    std::vector<GridCache> stations;
    std::vector<double> features, z0, a0, z1, a1, logits, probs, omega;
    std::vector<double> d_logits, d_a1, d_z1, d_a0, d_z0, d_features, d_omega;
  };
  struct FineWs {
    GridCache cell;
    std::vector<double> feat, input, z0, a0, logits, probs;
    std::vector<double> d_logits, d_a0, d_z0, d_input;
    CoarseWs coarse;
  };

  const Decoder& model;
  const ModelConfig& cfg;
  // tensor offsets resolved once
  struct MlpRefs {
    const TensorRef *w0, *b0, *w1, *b1, *w2, *b2;
  };
  TensorRef grid, fine_grid, omega_w, omega_b;
  MlpRefs coarse_mlp[3];
  TensorRef fine_w0, fine_b0, fine_w1, fine_b1;

  explicit DecoderKernels(const Decoder& m) : model(m), cfg(m.config()) {
    grid = m.tensor("coarse_grid");
    fine_grid = m.tensor("fine_grid");
    omega_w = m.tensor("omega.w");
    omega_b = m.tensor("omega.b");
    for (int a = 0; a < 3; ++a) {
      std::string g = std::string("g_") + axis_name(a);
      coarse_mlp[a] = {&m.tensor(g + ".w0"), &m.tensor(g + ".b0"), &m.tensor(g + ".w1"),
                       &m.tensor(g + ".b1"), &m.tensor(g + ".w2"), &m.tensor(g + ".b2")};
    }
    fine_w0 = m.tensor("fine.w0");
    fine_b0 = m.tensor("fine.b0");
    fine_w1 = m.tensor("fine.w1");
    fine_b1 = m.tensor("fine.b1");
  }

  std::span<const double> view(const TensorRef& t) const {
    return {model.params().data() + t.offset, t.size};
  }
  static std::span<double> gview(std::vector<double>& g, const TensorRef& t) {
    return {g.data() + t.offset, t.size};
  }

  void sample_features(const Vec3& x, AxisId axis, CoarseWs& ws) const {
    const int K = cfg.stations, C = cfg.grid_channels;
    ws.stations.resize(K);
    ws.features.resize(cfg.feature_dim());
    std::vector<Vec3> pts = ray_grid_points(x, axis, K);
    auto g = view(grid);
    for (int s = 0; s < K; ++s) {
      trilinear_cache(cfg.grid_res, C, pts[s], ws.stations[s]);
      grid_gather(g, ws.stations[s], C, ws.features.data() + static_cast<size_t>(s) * C);
    }
  }

  void coarse_forward(AxisId axis, CoarseWs& ws, bool want_omega) const {
    const MlpRefs& mlp = coarse_mlp[static_cast<int>(axis)];
    ws.z0.resize(cfg.hidden);
    ws.a0.resize(cfg.hidden);
    ws.z1.resize(cfg.hidden);
    ws.a1.resize(cfg.hidden);
    ws.logits.resize(cfg.n_coarse);
    ws.probs.resize(cfg.n_coarse);
    linear_forward(view(*mlp.w0), view(*mlp.b0), ws.features, ws.z0);
    leaky_relu(ws.z0, ws.a0);
    linear_forward(view(*mlp.w1), view(*mlp.b1), ws.a0, ws.z1);
    leaky_relu(ws.z1, ws.a1);
    linear_forward(view(*mlp.w2), view(*mlp.b2), ws.a1, ws.logits);
    for (int i = 0; i < cfg.n_coarse; ++i) ws.probs[i] = sigmoid(ws.logits[i]);
    if (want_omega) {
      ws.omega.resize(cfg.omega_dim);
      linear_forward(view(omega_w), view(omega_b), ws.a1, ws.omega);
    }
  }

  // d_logits and (optional) d_omega must be set; accumulates parameter
  // gradients into grad and clears nothing else.
  void coarse_backward(AxisId axis, CoarseWs& ws, std::vector<double>& grad,
                       bool with_omega) const {
    const MlpRefs& mlp = coarse_mlp[static_cast<int>(axis)];
    ws.d_a1.assign(cfg.hidden, 0.0);
    ws.d_z1.resize(cfg.hidden);
    ws.d_a0.resize(cfg.hidden);
    ws.d_z0.resize(cfg.hidden);
    ws.d_features.resize(cfg.feature_dim());

    std::vector<double> d_a1_tmp(cfg.hidden);
    linear_backward(view(*mlp.w2), ws.a1, ws.d_logits, gview(grad, *mlp.w2),
                    gview(grad, *mlp.b2), d_a1_tmp);
    for (int i = 0; i < cfg.hidden; ++i) ws.d_a1[i] += d_a1_tmp[i];
    if (with_omega) {
      linear_backward(view(omega_w), ws.a1, ws.d_omega, gview(grad, omega_w),
                      gview(grad, omega_b), d_a1_tmp);
      for (int i = 0; i < cfg.hidden; ++i) ws.d_a1[i] += d_a1_tmp[i];
    }
    leaky_relu_backward(ws.z1, ws.d_a1, ws.d_z1);
    linear_backward(view(*mlp.w1), ws.a0, ws.d_z1, gview(grad, *mlp.w1), gview(grad, *mlp.b1),
                    ws.d_a0);
    leaky_relu_backward(ws.z0, ws.d_a0, ws.d_z0);
    linear_backward(view(*mlp.w0), ws.features, ws.d_z0, gview(grad, *mlp.w0),
                    gview(grad, *mlp.b0), ws.d_features);

    auto grid_grad = gview(grad, grid);
    const int C = cfg.grid_channels;
    for (int s = 0; s < cfg.stations; ++s)
      grid_scatter(grid_grad, ws.stations[s], C,
                   ws.d_features.data() + static_cast<size_t>(s) * C);
  }

  void fine_forward(const Vec3& x, FineWs& ws) const {
    const int Cf = cfg.fine_channels;
    ws.feat.resize(Cf);
    bilinear_cache(cfg.fine_res, Cf, x.x, x.y, ws.cell);
    grid_gather(view(fine_grid), ws.cell, Cf, ws.feat.data());

    ws.input.resize(cfg.fine_input_dim());
    std::copy(ws.feat.begin(), ws.feat.end(), ws.input.begin());
    std::copy(ws.coarse.omega.begin(), ws.coarse.omega.end(), ws.input.begin() + Cf);

    ws.z0.resize(cfg.hidden);
    ws.a0.resize(cfg.hidden);
    ws.logits.resize(cfg.n_fine);
    ws.probs.resize(cfg.n_fine);
    linear_forward(view(fine_w0), view(fine_b0), ws.input, ws.z0);
    leaky_relu(ws.z0, ws.a0);
    linear_forward(view(fine_w1), view(fine_b1), ws.a0, ws.logits);
    for (int i = 0; i < cfg.n_fine; ++i) ws.probs[i] = sigmoid(ws.logits[i]);
  }

  void fine_backward(FineWs& ws, std::vector<double>& grad) const {
    const int Cf = cfg.fine_channels;
    ws.d_a0.resize(cfg.hidden);
    ws.d_z0.resize(cfg.hidden);
    ws.d_input.resize(cfg.fine_input_dim());
    linear_backward(view(fine_w1), ws.a0, ws.d_logits, gview(grad, fine_w1), gview(grad, fine_b1),
                    ws.d_a0);
    leaky_relu_backward(ws.z0, ws.d_a0, ws.d_z0);
    linear_backward(view(fine_w0), ws.input, ws.d_z0, gview(grad, fine_w0), gview(grad, fine_b0),
                    ws.d_input);

    grid_scatter(gview(grad, fine_grid), ws.cell, Cf, ws.d_input.data());

    // remainder of d_input flows into omega, then back through the depth MLP
    ws.coarse.d_omega.assign(cfg.omega_dim, 0.0);
    std::copy(ws.d_input.begin() + Cf, ws.d_input.end(), ws.coarse.d_omega.begin());
    ws.coarse.d_logits.assign(cfg.n_coarse, 0.0);  // no direct coarse supervision here
    coarse_backward(AxisId::Z, ws.coarse, grad, /*with_omega=*/true);
  }
};

// ---------------------------------------------------------------------------
// public forward-only API

std::vector<double> Decoder::ray_aligned_features(const Vec3& x, AxisId axis) const {
  DecoderKernels k(*this);
  DecoderKernels::CoarseWs ws;
  k.sample_features(x, axis, ws);
  return ws.features;
}

Decoder::CoarseOut Decoder::coarse_forward(const std::vector<double>& features,
                                           AxisId axis) const {
  if (static_cast<int>(features.size()) != cfg_.feature_dim())
    throw std::invalid_argument("coarse_forward: feature vector has wrong length");
  DecoderKernels k(*this);
  DecoderKernels::CoarseWs ws;
  ws.features = features;
  k.coarse_forward(axis, ws, axis == AxisId::Z);
  return {std::move(ws.probs), std::move(ws.omega)};
}

std::vector<double> Decoder::fine_forward(const Vec3& x, const std::vector<double>& omega) const {
  if (static_cast<int>(omega.size()) != cfg_.omega_dim)
    throw std::invalid_argument("fine_forward: omega has wrong length");
  DecoderKernels k(*this);
  DecoderKernels::FineWs ws;
  ws.coarse.omega = omega;
  k.fine_forward(x, ws);
  return std::move(ws.probs);
}

std::vector<double> Decoder::infer_coarse_vector(const Vec3& anchor, AxisId axis) const {
  DecoderKernels k(*this);
  DecoderKernels::CoarseWs ws;
  k.sample_features(anchor, axis, ws);
  k.coarse_forward(axis, ws, false);
  return std::move(ws.probs);
}

std::vector<double> Decoder::infer_fine_vector(const Vec3& anchor) const {
  DecoderKernels k(*this);
  DecoderKernels::FineWs ws;
  k.sample_features(anchor, AxisId::Z, ws.coarse);
  k.coarse_forward(AxisId::Z, ws.coarse, true);
  k.fine_forward(anchor, ws);
  return std::move(ws.probs);
}

namespace {

DenseVolume resize_along(const DenseVolume& v, int dim, int target) {
  int res[3] = {v.rx, v.ry, v.rz};
  if (res[dim] == target) return v;
  int out_res[3] = {res[0], res[1], res[2]};
  out_res[dim] = target;
  DenseVolume out(out_res[0], out_res[1], out_res[2]);
  const int d1 = (dim + 1) % 3, d2 = (dim + 2) % 3;
  std::vector<float> line(res[dim]);
  for (int a = 0; a < res[d1]; ++a) {
    for (int b = 0; b < res[d2]; ++b) {
      int idx[3];
      idx[d1] = a;
      idx[d2] = b;
      for (int i = 0; i < res[dim]; ++i) {
        idx[dim] = i;
        line[i] = v.at(idx[0], idx[1], idx[2]);
      }
      std::vector<float> resized = resize_vector(line, target);
      for (int i = 0; i < target; ++i) {
        idx[dim] = i;
        out.at(idx[0], idx[1], idx[2]) = resized[i];
      }
    }
  }
  return out;
}

}  // namespace

DenseVolume Decoder::infer_volume(int face_res, int out_res) const {
  if (face_res < 1 || out_res < 1)
    throw std::invalid_argument("infer_volume: resolutions must be >= 1");
  DenseVolume per_axis[3];
  for (int a = 0; a < 3; ++a) {
    AxisId axis = static_cast<AxisId>(a);
    const auto [u, v] = face_axes(axis);
    std::vector<FaceSample> field(static_cast<size_t>(face_res) * face_res);
    parallel_for(field.size(), [&](size_t begin, size_t end) {
      for (size_t s = begin; s < end; ++s) {
        int i = static_cast<int>(s) / face_res, j = static_cast<int>(s) % face_res;
        Vec3 p{0, 0, 0};
        p[a] = -0.5;
        p[u] = -0.5 + static_cast<double>(i + 1) / face_res;
        p[v] = -0.5 + static_cast<double>(j + 1) / face_res;
        std::vector<double> probs = axis == AxisId::Z ? infer_fine_vector(p)
                                                      : infer_coarse_vector(p, axis);
        std::vector<float> values(probs.begin(), probs.end());
        field[s] = {{static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)},
                    std::move(values)};
      }
    });
    DenseVolume vol = stack_vectors(field, axis, face_res, face_res, out_res);
    if (face_res != out_res) {  // interpolate between neighboring vectors
      vol = resize_along(vol, u, out_res);
      vol = resize_along(vol, v, out_res);
    }
    per_axis[a] = std::move(vol);
  }
  return aggregate(per_axis[0], per_axis[1], per_axis[2], cfg_.weights);
}

// ---------------------------------------------------------------------------
// losses and training

double weighted_bce(std::span<const double> probs, std::span<const uint8_t> targets,
                    std::span<const double> mask) {
  if (probs.size() != targets.size() || probs.size() != mask.size())
    throw std::invalid_argument("weighted_bce: length mismatch");
  double loss = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    double p = std::clamp(probs[i], kClampEps, 1.0 - kClampEps);
    if (targets[i])
      loss -= mask[i] * std::log(p);
    else
      loss -= std::log(1.0 - p);
  }
  return loss;
}

namespace {

// Loss for one sample plus d(loss)/d(logit) scaled by `factor`.
double bce_loss_and_dlogits(std::span<const double> probs, const OccupancyVector& gt,
                            double delta, double factor, std::span<double> d_logits) {
  double loss = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    const double o = probs[i];
    const double p = std::clamp(o, kClampEps, 1.0 - kClampEps);
    const double m =
        gt.occ[i] ? 1.0 + delta / static_cast<double>(gt.min_span[i]) : 1.0;
    if (gt.occ[i])
      loss -= m * std::log(p);
    else
      loss -= std::log(1.0 - p);
    if (o < kClampEps || o > 1.0 - kClampEps) {
      d_logits[i] = 0.0;  // clamp region: flat
    } else {
      d_logits[i] = factor * (gt.occ[i] ? m * (o - 1.0) : o);
    }
  }
  return loss;
}

struct BucketSums {
  double sum[4] = {0, 0, 0, 0};
};

struct FlatSample {
  const OccupancyVector* gt;
  int bucket;  // 0..2 coarse axis, 3 fine
};

LossBreakdown finalize_breakdown(const BucketSums& sums, const size_t counts[4],
                                 const AggregationWeights& w) {
  LossBreakdown b;
  b.lx = counts[0] ? sums.sum[0] / counts[0] : 0.0;
  b.ly = counts[1] ? sums.sum[1] / counts[1] : 0.0;
  b.lz = counts[2] ? sums.sum[2] / counts[2] : 0.0;
  b.lfine = counts[3] ? sums.sum[3] / counts[3] : 0.0;
  b.total = w.alpha * b.lx + w.beta * b.ly + w.gamma * b.lz + b.lfine;
  return b;
}

void check_batch(const Decoder& model, const TrainBatch& batch) {
  const ModelConfig& cfg = model.config();
  for (int a = 0; a < 3; ++a)
    for (const OccupancyVector* s : batch.coarse[a]) {
      if (static_cast<int>(s->axis) != a)
        throw std::invalid_argument("batch: sample axis does not match its bucket");
      if (s->n() != cfg.n_coarse)
        throw std::invalid_argument("batch: coarse sample length != n_coarse");
    }
  for (const OccupancyVector* s : batch.fine) {
    if (s->axis != AxisId::Z) throw std::invalid_argument("batch: fine sample must be z-axis");
    if (s->n() != cfg.n_fine) throw std::invalid_argument("batch: fine sample length != n_fine");
  }
}

std::vector<FlatSample> flatten_batch(const TrainBatch& batch, size_t counts[4]) {
  std::vector<FlatSample> flat;
  for (int a = 0; a < 3; ++a) {
    counts[a] = batch.coarse[a].size();
    for (const OccupancyVector* s : batch.coarse[a]) flat.push_back({s, a});
  }
  counts[3] = batch.fine.size();
  for (const OccupancyVector* s : batch.fine) flat.push_back({s, 3});
  return flat;
}

// Shared by total_loss (grad == nullptr blocks) and loss_and_gradient. Work
// is partitioned into kGradBlocks fixed blocks; per-block partial gradients
// and loss sums merge in block order, so results are identical for any
// thread count.
LossBreakdown run_batch(const Decoder& model, const TrainBatch& batch,
                        std::vector<std::vector<double>>* block_grads, BucketSums* out_sums,
                        size_t counts[4]) {
  check_batch(model, batch);
  const ModelConfig& cfg = model.config();
  std::vector<FlatSample> flat = flatten_batch(batch, counts);

  double factor[4];
  factor[0] = counts[0] ? cfg.weights.alpha / counts[0] : 0.0;
  factor[1] = counts[1] ? cfg.weights.beta / counts[1] : 0.0;
  factor[2] = counts[2] ? cfg.weights.gamma / counts[2] : 0.0;
  factor[3] = counts[3] ? 1.0 / counts[3] : 0.0;

  const size_t n_blocks = kGradBlocks;
  const size_t per_block = (flat.size() + n_blocks - 1) / n_blocks;
  std::vector<BucketSums> block_sums(n_blocks);

  DecoderKernels kernels(model);
  parallel_blocks(n_blocks, [&](size_t b) {
    DecoderKernels::CoarseWs coarse_ws;
    DecoderKernels::FineWs fine_ws;
    std::vector<double>* grad = block_grads ? &(*block_grads)[b] : nullptr;
    const size_t begin = b * per_block;
    const size_t end = std::min(flat.size(), begin + per_block);
    for (size_t s = begin; s < end; ++s) {
      const OccupancyVector& gt = *flat[s].gt;
      const int bucket = flat[s].bucket;
      const Vec3 anchor = gt.anchor_point();
      if (bucket < 3) {
        kernels.sample_features(anchor, gt.axis, coarse_ws);
        kernels.coarse_forward(gt.axis, coarse_ws, false);
        coarse_ws.d_logits.resize(cfg.n_coarse);
        block_sums[b].sum[bucket] += bce_loss_and_dlogits(coarse_ws.probs, gt, cfg.delta,
                                                          factor[bucket], coarse_ws.d_logits);
        if (grad) kernels.coarse_backward(gt.axis, coarse_ws, *grad, false);
      } else {
        kernels.sample_features(anchor, AxisId::Z, fine_ws.coarse);
        kernels.coarse_forward(AxisId::Z, fine_ws.coarse, true);
        kernels.fine_forward(anchor, fine_ws);
        fine_ws.d_logits.resize(cfg.n_fine);
        block_sums[b].sum[3] += bce_loss_and_dlogits(fine_ws.probs, gt, cfg.delta, factor[3],
                                                     fine_ws.d_logits);
        if (grad) kernels.fine_backward(fine_ws, *grad);
      }
    }
  });

  BucketSums sums;
  for (const BucketSums& bs : block_sums)
    for (int i = 0; i < 4; ++i) sums.sum[i] += bs.sum[i];
  if (out_sums) *out_sums = sums;
  return finalize_breakdown(sums, counts, cfg.weights);
}

}  // namespace

LossBreakdown total_loss(const Decoder& model, const TrainBatch& batch) {
  size_t counts[4];
  return run_batch(model, batch, nullptr, nullptr, counts);
}

LossBreakdown loss_and_gradient(const Decoder& model, const TrainBatch& batch,
                                std::vector<double>& grad) {
  const size_t n_params = model.params().size();
  std::vector<std::vector<double>> block_grads(kGradBlocks);
  for (auto& g : block_grads) g.assign(n_params, 0.0);

  size_t counts[4];
  LossBreakdown breakdown = run_batch(model, batch, &block_grads, nullptr, counts);

  grad.assign(n_params, 0.0);
  parallel_for(n_params, [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      double acc = 0.0;
      for (size_t b = 0; b < kGradBlocks; ++b) acc += block_grads[b][i];
      grad[i] = acc;
    }
  });
  return breakdown;
}

namespace {

// Deterministic bucket sampler: Fisher-Yates reshuffle per epoch.
struct IndexStream {
  std::vector<uint32_t> order;
  size_t pos = 0;
  Rng rng;

  IndexStream(size_t n, uint64_t seed) : rng(seed) {
    order.resize(n);
    for (size_t i = 0; i < n; ++i) order[i] = static_cast<uint32_t>(i);
    if (n) shuffle();
  }
  void shuffle() {
    for (size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[rng.next_below(i + 1)]);
    pos = 0;
  }
  uint32_t next() {
    if (pos >= order.size()) shuffle();
    return order[pos++];
  }
};

}  // namespace

std::vector<StepLoss> train(Decoder& model, const TrainData& data, std::ostream* log) {
  const ModelConfig& cfg = model.config();
  cfg.validate();

  // bucket sample pools
  std::vector<const OccupancyVector*> pool[4];
  for (int a = 0; a < 3; ++a) {
    if (!data.coarse[a]) continue;
    for (const OccupancyVector& s : data.coarse[a]->samples) {
      if (static_cast<int>(s.axis) != a) continue;
      if (s.n() != cfg.n_coarse)
        throw std::invalid_argument("train: coarse dataset N does not match n_coarse");
      pool[a].push_back(&s);
    }
  }
  if (data.fine) {
    for (const OccupancyVector& s : data.fine->samples) {
      if (s.axis != AxisId::Z) continue;
      if (s.n() != cfg.n_fine)
        throw std::invalid_argument("train: fine dataset N does not match n_fine");
      pool[3].push_back(&s);
    }
  }
  for (int b = 0; b < 4; ++b) {
    if (pool[b].empty() && log)
      *log << "warning: empty " << (b < 3 ? std::string("coarse ") + axis_name(b) : "fine")
           << " bucket; its loss term contributes 0\n";
  }

  IndexStream streams[4] = {
      {pool[0].size(), cfg.seed ^ 0xA24BAED4963EE407ULL},
      {pool[1].size(), cfg.seed ^ 0x9FB21C651E98DF25ULL},
      {pool[2].size(), cfg.seed ^ 0xC13FA9A902A6328FULL},
      {pool[3].size(), cfg.seed ^ 0xE220A8397B1DCDAFULL},
  };

  const size_t n_params = model.params().size();
  std::vector<std::vector<double>> block_grads(kGradBlocks);
  for (auto& g : block_grads) g.assign(n_params, 0.0);
  std::vector<double> grad(n_params, 0.0);
  std::vector<double> adam_m(n_params, 0.0), adam_v(n_params, 0.0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

  std::vector<StepLoss> history;
  history.reserve(cfg.steps);

  for (int step = 0; step < cfg.steps; ++step) {
    TrainBatch batch;
    for (int b = 0; b < 4; ++b) {
      if (pool[b].empty()) continue;
      auto& dst = b < 3 ? batch.coarse[b] : batch.fine;
      for (int i = 0; i < cfg.batch_size; ++i) dst.push_back(pool[b][streams[b].next()]);
    }

    parallel_blocks(kGradBlocks, [&](size_t b) {
      std::fill(block_grads[b].begin(), block_grads[b].end(), 0.0);
    });
    size_t counts[4];
    LossBreakdown loss = run_batch(model, batch, &block_grads, nullptr, counts);
    if (!std::isfinite(loss.total)) throw NumericalAbort(step);

    parallel_for(n_params, [&](size_t begin, size_t end) {
      for (size_t i = begin; i < end; ++i) {
        double acc = 0.0;
        for (size_t bb = 0; bb < kGradBlocks; ++bb) acc += block_grads[bb][i];
        grad[i] = acc;
      }
    });

    if (cfg.clip_norm > 0.0) {
      double norm2_acc = 0.0;
      for (double g : grad) norm2_acc += g * g;
      double gnorm = std::sqrt(norm2_acc);
      if (gnorm > cfg.clip_norm) {
        double scale = cfg.clip_norm / gnorm;
        for (double& g : grad) g *= scale;
      }
    }

    const double bias1 = 1.0 - std::pow(kBeta1, step + 1);
    const double bias2 = 1.0 - std::pow(kBeta2, step + 1);
    const double lr = cfg.learning_rate;
    std::vector<double>& params = model.params();
    parallel_for(n_params, [&](size_t begin, size_t end) {
      for (size_t i = begin; i < end; ++i) {
        adam_m[i] = kBeta1 * adam_m[i] + (1.0 - kBeta1) * grad[i];
        adam_v[i] = kBeta2 * adam_v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
        double mhat = adam_m[i] / bias1;
        double vhat = adam_v[i] / bias2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
      }
    });

    history.push_back({step, loss});
    if (log && (step % 200 == 0 || step + 1 == cfg.steps))
      *log << "step " << step << " total " << loss.total << " (x " << loss.lx << " y " << loss.ly
           << " z " << loss.lz << " fine " << loss.lfine << ")\n";
  }
  return history;
}

void write_loss_csv(const std::vector<StepLoss>& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open output file: " + path);
  out << "step,loss_x,loss_y,loss_z,loss_fine,total\n";
  char buf[200];
  for (const StepLoss& s : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.step, s.loss.lx,
                  s.loss.ly, s.loss.lz, s.loss.lfine, s.loss.total);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"n_coarse", c.n_coarse},
          {"n_fine", c.n_fine},
          {"grid_res", c.grid_res},
          {"grid_channels", c.grid_channels},
          {"stations", c.stations},
          {"fine_res", c.fine_res},
          {"fine_channels", c.fine_channels},
          {"hidden", c.hidden},
          {"omega_dim", c.omega_dim},
          {"delta", c.delta},
          {"weights", {c.weights.alpha, c.weights.beta, c.weights.gamma}},
          {"learning_rate", c.learning_rate},
          {"steps", c.steps},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"clip_norm", c.clip_norm}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_coarse = j.at("n_coarse").get<int>();
  c.n_fine = j.at("n_fine").get<int>();
  c.grid_res = j.at("grid_res").get<int>();
  c.grid_channels = j.at("grid_channels").get<int>();
  c.stations = j.at("stations").get<int>();
  c.fine_res = j.at("fine_res").get<int>();
  c.fine_channels = j.at("fine_channels").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.omega_dim = j.at("omega_dim").get<int>();
  c.delta = j.at("delta").get<double>();
  c.weights.alpha = j.at("weights")[0].get<double>();
  c.weights.beta = j.at("weights")[1].get<double>();
  c.weights.gamma = j.at("weights")[2].get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.steps = j.at("steps").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.clip_norm = j.at("clip_norm").get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const Decoder& model, const std::string& path) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["config"] = config_to_json(model.config());
  nlohmann::json tensors = nlohmann::json::array();
  for (const TensorRef& t : model.tensors())
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}, {"size", t.size}});
  manifest["tensors"] = tensors;
  const std::string manifest_str = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open output file: " + path);
  out.write("TIFM", 4);
  uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  uint64_t len = manifest_str.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(manifest_str.data(), static_cast<std::streamsize>(len));
  std::vector<float> payload(model.params().begin(), model.params().end());
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path);
}

Decoder load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TIFM", 4) != 0) throw ParseError(path + ": bad magic");
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != 1)
    throw ParseError(path + ": unsupported version " + std::to_string(version));
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ull << 30)) throw ParseError(path + ": bad manifest length");
  std::string manifest_str(len, '\0');
  in.read(manifest_str.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError(path + ": truncated file");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_str);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad manifest: " + e.what());
  }
  Decoder model(config_from_json(manifest.at("config")));

  std::vector<float> payload(model.params().size());
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (static_cast<size_t>(in.gcount()) != payload.size() * sizeof(float))
    throw ParseError(path + ": truncated tensor payload");
  for (size_t i = 0; i < payload.size(); ++i) model.params()[i] = payload[i];
  return model;
}

}  // namespace tifu
