#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "testutil.hpp"
#include "tifu/fixtures.hpp"
#include "tifu/model.hpp"
#include "tifu/parallel.hpp"

using namespace tifu;

namespace {

// Small dimensions keep finite differencing over whole tensors affordable.
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_coarse = 5;
  cfg.n_fine = 7;
  cfg.grid_res = 4;
  cfg.grid_channels = 4;
  cfg.stations = 4;
  cfg.fine_res = 4;
  cfg.fine_channels = 6;
  cfg.hidden = 16;
  cfg.omega_dim = 5;
  cfg.batch_size = 2;
  cfg.steps = 0;
  return cfg;
}

OccupancyVector fake_sample(AxisId axis, const Vec3& anchor, int n, uint64_t seed) {
  OccupancyVector s;
  s.axis = axis;
  s.anchor = {static_cast<float>(anchor.x), static_cast<float>(anchor.y),
              static_cast<float>(anchor.z)};
  s.occ.resize(n);
  s.min_span.resize(n);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    s.occ[i] = rng.next_double() < 0.4 ? 1 : 0;
    s.min_span[i] = static_cast<float>(rng.uniform(0.05, 0.8));
  }
  return s;
}

struct FakeBatchStore {
  std::vector<OccupancyVector> keep;
  TrainBatch batch;
};

FakeBatchStore make_fake_batch(const ModelConfig& cfg, int per_bucket, uint64_t seed) {
  FakeBatchStore store;
  store.keep.reserve(per_bucket * 4);
  Rng rng(seed);
  for (int a = 0; a < 3; ++a)
    for (int i = 0; i < per_bucket; ++i) {
      Vec3 anchor{rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45)};
      store.keep.push_back(fake_sample(static_cast<AxisId>(a), anchor, cfg.n_coarse, rng.next_u64()));
    }
  for (int i = 0; i < per_bucket; ++i) {
    Vec3 anchor{rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45), -0.5};
    store.keep.push_back(fake_sample(AxisId::Z, anchor, cfg.n_fine, rng.next_u64()));
  }
  for (int a = 0; a < 3; ++a)
    for (int i = 0; i < per_bucket; ++i)
      store.batch.coarse[a].push_back(&store.keep[a * per_bucket + i]);
  for (int i = 0; i < per_bucket; ++i)
    store.batch.fine.push_back(&store.keep[3 * per_bucket + i]);
  return store;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

}  // namespace

TEST_CASE("ray_aligned_features: constant grid gives a constant feature") {
  ModelConfig cfg;  // default dims: 8 stations x 16 channels = 128
  Decoder model(cfg);
  auto grid = model.tensor("coarse_grid");
  for (size_t i = 0; i < grid.size; ++i) model.params()[grid.offset + i] = 0.37;
  for (AxisId axis : {AxisId::X, AxisId::Y, AxisId::Z}) {
    auto f = model.ray_aligned_features({0.123, -0.22, 0.31}, axis);
    REQUIRE(f.size() == 128);
    for (double v : f) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
  }
}

TEST_CASE("ray_aligned_features reproduces linear ramps exactly") {
  ModelConfig cfg = tiny_config();
  Decoder model(cfg);
  auto grid = model.tensor("coarse_grid");
  // channel c value = 0.2*c + 1.5*z where z is the lattice coordinate
  const int R = cfg.grid_res, C = cfg.grid_channels;
  for (int ix = 0; ix < R; ++ix)
    for (int iy = 0; iy < R; ++iy)
      for (int iz = 0; iz < R; ++iz)
        for (int c = 0; c < C; ++c) {
          double z = -0.5 + static_cast<double>(iz) / (R - 1);
          model.params()[grid.offset + ((static_cast<size_t>(ix) * R + iy) * R + iz) * C + c] =
              0.2 * c + 1.5 * z;
        }
  Vec3 x{0.21, -0.37, 0.0};
  auto f = model.ray_aligned_features(x, AxisId::Z);
  auto pts = ray_grid_points(x, AxisId::Z, cfg.stations);
  for (int s = 0; s < cfg.stations; ++s)
    for (int c = 0; c < C; ++c)
      CHECK(f[s * C + c] == doctest::Approx(0.2 * c + 1.5 * pts[s].z).epsilon(1e-12));
}

TEST_CASE("coarse_forward at zero parameters outputs one half") {
  Decoder model(tiny_config());  // params start at zero
  std::vector<double> features(model.config().feature_dim(), 0.9);
  auto out = model.coarse_forward(features, AxisId::Z);
  REQUIRE(out.probs.size() == 5);
  for (double p : out.probs) CHECK(p == 0.5);
  REQUIRE(out.omega.size() == 5);  // omega tap present on the depth axis

  auto out_x = model.coarse_forward(features, AxisId::X);
  CHECK(out_x.omega.empty());

  SUBCASE("outputs stay strictly inside (0,1) for random parameters") {
    model.init_params(99);
    auto o = model.coarse_forward(features, AxisId::Y);
    for (double p : o.probs) {
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
  }
}

TEST_CASE("fine_forward: zero params give one half; fine features ignore z") {
  ModelConfig cfg = tiny_config();
  Decoder model(cfg);
  std::vector<double> omega(cfg.omega_dim, 0.3);
  auto probs = model.fine_forward({0.1, 0.2, -0.4}, omega);
  REQUIRE(probs.size() == 7);
  for (double p : probs) CHECK(p == 0.5);

  model.init_params(3);
  auto a = model.fine_forward({0.1, 0.2, -0.4}, omega);
  auto b = model.fine_forward({0.1, 0.2, 0.35}, omega);  // same (x, y), different z
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("weighted_bce matches its formula") {
  SUBCASE("perfect prediction is ~0") {
    std::vector<double> probs{1.0, 0.0, 1.0};
    std::vector<uint8_t> target{1, 0, 1};
    std::vector<double> mask{2.0, 1.0, 1.5};
    CHECK(weighted_bce(probs, target, mask) <= 3 * 2 * 1e-7);
  }
  SUBCASE("single element arithmetic") {
    std::vector<double> probs{0.5};
    std::vector<uint8_t> target{1};
    std::vector<double> mask{2.0};
    CHECK(weighted_bce(probs, target, mask) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("all-ones mask reduces to plain BCE") {
    Rng rng(17);
    std::vector<double> probs(20);
    std::vector<uint8_t> target(20);
    std::vector<double> mask(20, 1.0);
    for (int i = 0; i < 20; ++i) {
      probs[i] = rng.uniform(0.01, 0.99);
      target[i] = rng.next_double() < 0.5;
    }
    double expected = 0.0;
    for (int i = 0; i < 20; ++i)
      expected -= target[i] ? std::log(probs[i]) : std::log(1.0 - probs[i]);
    CHECK(weighted_bce(probs, target, mask) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("length mismatch") {
    std::vector<double> p{0.5};
    std::vector<uint8_t> t{1, 0};
    std::vector<double> m{1, 1};
    CHECK_THROWS_AS(weighted_bce(p, t, m), std::invalid_argument);
  }
}

TEST_CASE("total_loss composes the weighted sum") {
  ModelConfig cfg = tiny_config();
  Decoder model(cfg);  // zero params: every prediction is 0.5

  // identical targets in every coarse bucket -> identical per-axis losses
  OccupancyVector proto = fake_sample(AxisId::X, {0, 0, -0.5}, cfg.n_coarse, 5);
  OccupancyVector protos[3] = {proto, proto, proto};
  protos[1].axis = AxisId::Y;
  protos[2].axis = AxisId::Z;
  OccupancyVector fine = fake_sample(AxisId::Z, {0, 0, -0.5}, cfg.n_fine, 6);

  TrainBatch batch;
  for (int a = 0; a < 3; ++a) batch.coarse[a].push_back(&protos[a]);
  batch.fine.push_back(&fine);

  LossBreakdown b = total_loss(model, batch);
  CHECK(b.lx == doctest::Approx(b.ly).epsilon(1e-12));
  CHECK(b.ly == doctest::Approx(b.lz).epsilon(1e-12));
  CHECK(b.total == doctest::Approx(b.lx + b.lfine).epsilon(1e-9));  // alpha+beta+gamma = 1
  CHECK(std::isfinite(b.total));
  CHECK(b.total >= 0.0);

  SUBCASE("empty buckets contribute zero") {
    TrainBatch partial;
    partial.coarse[0].push_back(&protos[0]);
    LossBreakdown p = total_loss(model, partial);
    CHECK(p.ly == 0.0);
    CHECK(p.lz == 0.0);
    CHECK(p.lfine == 0.0);
    CHECK(p.total == doctest::Approx(p.lx / 7.0).epsilon(1e-12));
  }
}

TEST_CASE("batch order does not change the loss beyond 1e-9") {
  ModelConfig cfg = tiny_config();
  Decoder model(cfg);
  model.init_params(11);
  FakeBatchStore store = make_fake_batch(cfg, 6, 21);
  LossBreakdown a = total_loss(model, store.batch);

  TrainBatch shuffled = store.batch;
  std::reverse(shuffled.coarse[0].begin(), shuffled.coarse[0].end());
  std::reverse(shuffled.coarse[2].begin(), shuffled.coarse[2].end());
  std::reverse(shuffled.fine.begin(), shuffled.fine.end());
  LossBreakdown b = total_loss(model, shuffled);
  CHECK(std::abs(a.total - b.total) < 1e-9);
}

TEST_CASE("analytic gradients match central finite differences") {
  ModelConfig cfg = tiny_config();
  Decoder model(cfg);
  model.init_params(404);
  FakeBatchStore store = make_fake_batch(cfg, 2, 31);

  std::vector<double> grad;
  loss_and_gradient(model, store.batch, grad);
  REQUIRE(grad.size() == model.params().size());

  const double h = 1e-4;
  Rng rng(77);
  for (const TensorRef& t : model.tensors()) {
    // probe every small tensor, a random subset of large ones
    size_t probes = t.size <= 32 ? t.size : 24;
    double worst = 0.0;
    for (size_t k = 0; k < probes; ++k) {
      size_t idx = t.offset + (t.size <= 32 ? k : rng.next_below(t.size));
      double saved = model.params()[idx];
      model.params()[idx] = saved + h;
      double up = total_loss(model, store.batch).total;
      model.params()[idx] = saved - h;
      double down = total_loss(model, store.batch).total;
      model.params()[idx] = saved;
      double fd = (up - down) / (2 * h);
      worst = std::max(worst, relative_error(fd, grad[idx]));
    }
    INFO("tensor ", t.name, " worst relative error ", worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("gradients are identical for any thread count") {
  ModelConfig cfg = tiny_config();
  Decoder model(cfg);
  model.init_params(5);
  FakeBatchStore store = make_fake_batch(cfg, 5, 8);

  std::vector<double> g1, g4;
  set_default_threads(1);
  LossBreakdown l1 = loss_and_gradient(model, store.batch, g1);
  set_default_threads(4);
  LossBreakdown l4 = loss_and_gradient(model, store.batch, g4);
  set_default_threads(0);
  CHECK(l1.total == l4.total);
  CHECK(g1 == g4);
}

namespace {

struct SphereData {
  VectorDataset coarse;
  VectorDataset fine;
  TrainData data;
};

SphereData make_sphere_training_data(int n_coarse, int n_fine, int samples_per_axis) {
  SphereData d;
  Bvh bvh(make_icosphere(0.4, 3));
  d.coarse = generate_dataset(bvh, "sphere", n_coarse, samples_per_axis,
                              SamplingMode::FaceGrid, 9);
  VectorDataset full_fine = generate_dataset(bvh, "sphere", n_fine, samples_per_axis,
                                             SamplingMode::FaceGrid, 9);
  d.fine.meta = full_fine.meta;
  for (const OccupancyVector& s : full_fine.samples)
    if (s.axis == AxisId::Z) d.fine.samples.push_back(s);
  for (int a = 0; a < 3; ++a) d.data.coarse[a] = &d.coarse;
  d.data.fine = &d.fine;
  return d;
}

}  // namespace

TEST_CASE("train: determinism, zero learning rate, NaN abort") {
  ModelConfig cfg = tiny_config();
  cfg.steps = 25;
  cfg.batch_size = 4;
  cfg.seed = 123;
  SphereData sphere = make_sphere_training_data(cfg.n_coarse, cfg.n_fine, 6);

  SUBCASE("same seed and config give bit-identical loss histories") {
    Decoder m1(cfg), m2(cfg);
    m1.init_params(cfg.seed);
    m2.init_params(cfg.seed);
    set_default_threads(1);
    auto h1 = train(m1, sphere.data);
    set_default_threads(3);
    auto h2 = train(m2, sphere.data);
    set_default_threads(0);
    REQUIRE(h1.size() == h2.size());
    for (size_t i = 0; i < h1.size(); ++i) {
      CHECK(h1[i].loss.total == h2[i].loss.total);
      CHECK(h1[i].loss.lfine == h2[i].loss.lfine);
    }
    CHECK(m1.params() == m2.params());
  }

  SUBCASE("learning rate zero leaves parameters unchanged") {
    Decoder model(cfg);
    model.init_params(7);
    std::vector<double> before = model.params();
    ModelConfig frozen = cfg;
    frozen.learning_rate = 0.0;
    frozen.batch_size = 36;  // whole pool per step, so the loss is flat too
    Decoder frozen_model(frozen);
    frozen_model.init_params(7);
    auto history = train(frozen_model, sphere.data);
    CHECK(frozen_model.params() == before);
    for (size_t i = 1; i < history.size(); ++i)
      CHECK(history[i].loss.total == doctest::Approx(history[0].loss.total).epsilon(1e-9));
  }

  SUBCASE("non-finite loss aborts with the step index") {
    SphereData poisoned = make_sphere_training_data(cfg.n_coarse, cfg.n_fine, 6);
    poisoned.coarse.samples[0].occ[0] = 1;
    poisoned.coarse.samples[0].min_span[0] = std::numeric_limits<float>::quiet_NaN();
    for (int a = 0; a < 3; ++a) poisoned.data.coarse[a] = &poisoned.coarse;
    poisoned.data.fine = &poisoned.fine;
    ModelConfig small = cfg;
    small.steps = 400;  // enough epochs that the poisoned sample is drawn
    small.batch_size = 64;
    Decoder model(small);
    model.init_params(1);
    CHECK_THROWS_AS(train(model, poisoned.data), NumericalAbort);
  }
}

TEST_CASE("infer_volume: untrained zero model yields a constant 0.5 volume") {
  ModelConfig cfg = tiny_config();
  Decoder model(cfg);  // all-zero parameters
  DenseVolume v = model.infer_volume(8, 8);
  REQUIRE(v.data.size() == 8u * 8u * 8u);
  for (float x : v.data) CHECK(x == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("infer_volume shares anchors between face_res and 2*face_res") {
  ModelConfig cfg = tiny_config();
  Decoder model(cfg);
  model.init_params(2718);

  // anchor (i+1)/F coincides with anchor (2i+2)/(2F): identical inputs must
  // give identical outputs
  const int F = 4;
  for (int i = 0; i < F; ++i) {
    Vec3 a{0, 0, 0};
    a[0] = -0.5 + static_cast<double>(i + 1) / F;
    a[1] = -0.5 + 2.0 / F;
    Vec3 b{0, 0, 0};
    b[0] = -0.5 + static_cast<double>(2 * i + 2) / (2 * F);
    b[1] = -0.5 + 4.0 / (2 * F);
    auto va = model.infer_fine_vector(a);
    auto vb = model.infer_fine_vector(b);
    CHECK(va == vb);
  }

  SUBCASE("endpoint voxel is preserved when out_res doubles") {
    // resize_vector preserves endpoints, so the (+0.5,+0.5,+0.5) corner picks
    // the shared anchor's final element along every axis at both resolutions
    DenseVolume lo = model.infer_volume(F, F);
    DenseVolume hi = model.infer_volume(2 * F, 2 * F);
    CHECK(lo.at(F - 1, F - 1, F - 1) ==
          doctest::Approx(hi.at(2 * F - 1, 2 * F - 1, 2 * F - 1)).epsilon(1e-6));
  }
}

TEST_CASE("checkpoint round-trip preserves config and f32 parameters") {
  ModelConfig cfg = tiny_config();
  cfg.seed = 31;
  Decoder model(cfg);
  model.init_params(31);
  tifu::test::TempDir dir;
  std::string path = dir.file("model.tifm");
  save_checkpoint(model, path);

  std::string bytes = tifu::test::read_file(path);
  CHECK(bytes.substr(0, 4) == "TIFM");

  Decoder back = load_checkpoint(path);
  CHECK(back.config().n_coarse == cfg.n_coarse);
  CHECK(back.config().n_fine == cfg.n_fine);
  CHECK(back.config().omega_dim == cfg.omega_dim);
  REQUIRE(back.params().size() == model.params().size());
  for (size_t i = 0; i < model.params().size(); ++i)
    CHECK(back.params()[i] == static_cast<double>(static_cast<float>(model.params()[i])));

  SUBCASE("corrupt magic is rejected") {
    bytes[0] = 'Z';
    tifu::test::write_file(path, bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("bad magic"), ParseError);
  }
  SUBCASE("truncated payload is rejected") {
    bytes.resize(bytes.size() - 10);
    tifu::test::write_file(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), ParseError);
  }
}

TEST_CASE("model config validation") {
  ModelConfig cfg = tiny_config();
  cfg.n_fine = cfg.n_coarse - 1;
  CHECK_THROWS_AS(Decoder{cfg}, std::invalid_argument);
  ModelConfig bad_weights = tiny_config();
  bad_weights.weights = {0.2, 0.2, 0.2};
  CHECK_THROWS_AS(Decoder{bad_weights}, std::invalid_argument);
}
