#include "tifu/cli.hpp"

#include <filesystem>
#include <fstream>

#include "CLI11.hpp"
#include "nlohmann/json.hpp"
#include "tifu/fixtures.hpp"
#include "tifu/metrics.hpp"
#include "tifu/model.hpp"
#include "tifu/parallel.hpp"
#include "tifu/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tifu::cli {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumerical = 3;

// Built-in defaults -> JSON config file -> command-line flags.
struct PipelineConfig {
  // paths
  std::string mesh, data, checkpoint, output, pred, gt;
  // occupancy
  int n = 32;
  int n_fine = 0;  // 0 disables the fine dataset
  int samples_per_axis = 32;
  std::string mode = "face-grid";
  double delta = 0.05;
  double margin = 0.05;
  // model (everything else defaults from ModelConfig)
  ModelConfig model;
  // volume
  int out_res = 64;
  int face_res = 0;  // 0 -> out_res
  double iso = 0.5;
  // metrics
  int points = 10000;
  int map_res = 256;
  std::string normal_average = "union";
  // shared
  uint64_t seed = 0;
  int threads = 0;
};

void apply_json(PipelineConfig& cfg, const json& j) {
  if (j.contains("paths")) {
    const json& p = j["paths"];
    if (p.contains("mesh")) cfg.mesh = p["mesh"].get<std::string>();
    if (p.contains("dataset")) cfg.data = p["dataset"].get<std::string>();
    if (p.contains("checkpoint")) cfg.checkpoint = p["checkpoint"].get<std::string>();
    if (p.contains("output")) cfg.output = p["output"].get<std::string>();
    if (p.contains("pred")) cfg.pred = p["pred"].get<std::string>();
    if (p.contains("gt")) cfg.gt = p["gt"].get<std::string>();
  }
  if (j.contains("occupancy")) {
    const json& o = j["occupancy"];
    if (o.contains("n")) cfg.n = o["n"].get<int>();
    if (o.contains("n_fine")) cfg.n_fine = o["n_fine"].get<int>();
    if (o.contains("samples_per_axis")) cfg.samples_per_axis = o["samples_per_axis"].get<int>();
    if (o.contains("mode")) cfg.mode = o["mode"].get<std::string>();
    if (o.contains("delta")) cfg.delta = o["delta"].get<double>();
    if (o.contains("margin")) cfg.margin = o["margin"].get<double>();
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    ModelConfig& c = cfg.model;
    if (m.contains("grid_res")) c.grid_res = m["grid_res"].get<int>();
    if (m.contains("grid_channels")) c.grid_channels = m["grid_channels"].get<int>();
    if (m.contains("stations")) c.stations = m["stations"].get<int>();
    if (m.contains("fine_res")) c.fine_res = m["fine_res"].get<int>();
    if (m.contains("fine_channels")) c.fine_channels = m["fine_channels"].get<int>();
    if (m.contains("hidden")) c.hidden = m["hidden"].get<int>();
    if (m.contains("omega_dim")) c.omega_dim = m["omega_dim"].get<int>();
    if (m.contains("learning_rate")) c.learning_rate = m["learning_rate"].get<double>();
    if (m.contains("steps")) c.steps = m["steps"].get<int>();
    if (m.contains("batch_size")) c.batch_size = m["batch_size"].get<int>();
    if (m.contains("clip_norm")) c.clip_norm = m["clip_norm"].get<double>();
    if (m.contains("weights")) {
      c.weights.alpha = m["weights"][0].get<double>();
      c.weights.beta = m["weights"][1].get<double>();
      c.weights.gamma = m["weights"][2].get<double>();
    }
  }
  if (j.contains("volume")) {
    const json& v = j["volume"];
    if (v.contains("out_res")) cfg.out_res = v["out_res"].get<int>();
    if (v.contains("face_res")) cfg.face_res = v["face_res"].get<int>();
    if (v.contains("iso")) cfg.iso = v["iso"].get<double>();
    if (v.contains("weights")) {
      cfg.model.weights.alpha = v["weights"][0].get<double>();
      cfg.model.weights.beta = v["weights"][1].get<double>();
      cfg.model.weights.gamma = v["weights"][2].get<double>();
    }
  }
  if (j.contains("metrics")) {
    const json& m = j["metrics"];
    if (m.contains("points")) cfg.points = m["points"].get<int>();
    if (m.contains("map_res")) cfg.map_res = m["map_res"].get<int>();
    if (m.contains("normal_average")) cfg.normal_average = m["normal_average"].get<std::string>();
    if (m.contains("seed")) cfg.seed = m["seed"].get<uint64_t>();
  }
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  if (j.contains("threads")) cfg.threads = j["threads"].get<int>();
}

PipelineConfig load_config(const std::vector<std::string>& args) {
  PipelineConfig cfg;
  for (size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") {
      std::ifstream in(args[i + 1]);
      if (!in) throw IoError("cannot open config file: " + args[i + 1]);
      json j;
      try {
        in >> j;
      } catch (const json::exception& e) {
        throw ParseError(args[i + 1] + ": " + e.what());
      }
      apply_json(cfg, j);
    }
  }
  return cfg;
}

SamplingMode parse_mode(const std::string& mode) {
  if (mode == "face-grid") return SamplingMode::FaceGrid;
  if (mode == "uniform-random") return SamplingMode::UniformRandom;
  throw CLI::ValidationError("--mode", "must be face-grid or uniform-random");
}

NormalAverage parse_average(const std::string& avg) {
  if (avg == "union") return NormalAverage::ForegroundUnion;
  if (avg == "intersection") return NormalAverage::ForegroundIntersection;
  if (avg == "full-frame") return NormalAverage::FullFrame;
  throw CLI::ValidationError("--normal-average", "must be union, intersection or full-frame");
}

void require_path(const std::string& path, const std::string& what) {
  if (path.empty()) throw CLI::RequiredError(what);
  if (!fs::exists(path)) throw IoError(what + " not found: " + path);
}

std::string dataset_stem(const std::string& mesh_path) {
  return fs::path(mesh_path).stem().string();
}

TriangleMesh load_canonical_mesh(const PipelineConfig& cfg, std::ostream& err,
                                 SimilarityTransform* transform = nullptr,
                                 bool* watertight = nullptr) {
  require_path(cfg.mesh, "--mesh");
  TriangleMesh raw = load_obj(cfg.mesh);
  auto [mesh, xf] = normalize_to_canonical(raw, cfg.margin);
  bool wt = is_watertight(mesh);
  if (!wt)
    err << "warning: " << cfg.mesh
        << " is not watertight; occupancy generation proceeds with global ray parity\n";
  if (transform) *transform = xf;
  if (watertight) *watertight = wt;
  return mesh;
}

int cmd_fixtures(const PipelineConfig& cfg, std::ostream& out) {
  fs::path dir = cfg.output.empty() ? fs::path(".") : fs::path(cfg.output);
  fs::create_directories(dir);
  save_obj(make_icosphere(0.4, 4), (dir / "sphere.obj").string());
  save_obj(make_box({0, 0, 0}, {0.4, 0.2, 0.3}), (dir / "box.obj").string());
  save_obj(make_dumbbell(), (dir / "dumbbell.obj").string());
  out << "wrote sphere.obj box.obj dumbbell.obj to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_gen(const PipelineConfig& cfg, std::ostream& out, std::ostream& err) {
  SimilarityTransform xf;
  bool watertight = false;
  TriangleMesh mesh = load_canonical_mesh(cfg, err, &xf, &watertight);
  Bvh bvh(mesh);

  if (cfg.output.empty()) throw CLI::RequiredError("--out");
  fs::path prefix(cfg.output);
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());

  const std::string mesh_id = dataset_stem(cfg.mesh);
  json files;
  const char* axis_names[3] = {"x", "y", "z"};
  for (int a = 0; a < 3; ++a) {
    VectorDataset ds;
    ds.mesh_id = mesh_id;
    ds.meta = {static_cast<uint32_t>(cfg.n), static_cast<uint32_t>(cfg.samples_per_axis),
               parse_mode(cfg.mode), cfg.delta, cfg.seed};
    ds.samples = generate_axis_samples(bvh, cfg.n, cfg.samples_per_axis, parse_mode(cfg.mode),
                                       cfg.seed, static_cast<AxisId>(a));
    std::string path = prefix.string() + "_" + axis_names[a] + ".tifuvec";
    write_dataset(ds, path);
    files[axis_names[a]] = fs::path(path).filename().string();
    out << "wrote " << path << " (" << ds.samples.size() << " samples, N=" << cfg.n << ")\n";
  }
  if (cfg.n_fine > 0) {
    VectorDataset ds;
    ds.mesh_id = mesh_id;
    ds.meta = {static_cast<uint32_t>(cfg.n_fine), static_cast<uint32_t>(cfg.samples_per_axis),
               parse_mode(cfg.mode), cfg.delta, cfg.seed};
    ds.samples = generate_axis_samples(bvh, cfg.n_fine, cfg.samples_per_axis,
                                       parse_mode(cfg.mode), cfg.seed, AxisId::Z);
    std::string path = prefix.string() + "_z_fine.tifuvec";
    write_dataset(ds, path);
    files["z_fine"] = fs::path(path).filename().string();
    out << "wrote " << path << " (" << ds.samples.size() << " samples, N=" << cfg.n_fine << ")\n";
  }

  json manifest = {{"mesh_id", mesh_id},
                   {"mesh", cfg.mesh},
                   {"watertight", watertight},
                   {"n", cfg.n},
                   {"n_fine", cfg.n_fine},
                   {"samples_per_axis", cfg.samples_per_axis},
                   {"mode", cfg.mode},
                   {"delta", cfg.delta},
                   {"seed", cfg.seed},
                   {"margin", cfg.margin},
                   {"transform",
                    {{"scale", xf.scale},
                     {"translation", {xf.translation.x, xf.translation.y, xf.translation.z}}}},
                   {"files", files}};
  std::string manifest_path = prefix.string() + "_manifest.json";
  std::ofstream mf(manifest_path);
  if (!mf) throw IoError("cannot open output file: " + manifest_path);
  mf << manifest.dump(2) << "\n";
  out << "wrote " << manifest_path << "\n";
  return kExitOk;
}

int cmd_train(PipelineConfig cfg, std::ostream& out, std::ostream& err, bool delta_overridden) {
  require_path(cfg.data, "--data");
  std::ifstream mf(cfg.data);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw ParseError(cfg.data + ": " + e.what());
  }
  fs::path base = fs::path(cfg.data).parent_path();

  auto dataset_path = [&](const std::string& key) -> std::string {
    return (base / manifest.at("files").at(key).get<std::string>()).string();
  };
  VectorDataset ds[3] = {read_dataset(dataset_path("x")), read_dataset(dataset_path("y")),
                         read_dataset(dataset_path("z"))};
  std::optional<VectorDataset> fine;
  if (manifest.at("files").contains("z_fine")) fine = read_dataset(dataset_path("z_fine"));

  ModelConfig mc = cfg.model;
  mc.n_coarse = static_cast<int>(ds[0].meta.n);
  mc.n_fine = fine ? static_cast<int>(fine->meta.n) : mc.n_coarse;
  if (!delta_overridden) mc.delta = ds[0].meta.delta;
  mc.seed = cfg.seed;

  Decoder model(mc);
  model.init_params(mc.seed);

  TrainData data;
  for (int a = 0; a < 3; ++a) data.coarse[a] = &ds[a];
  if (fine) data.fine = &*fine;
  std::vector<StepLoss> history = train(model, data, &err);

  if (cfg.output.empty()) throw CLI::RequiredError("--out");
  if (fs::path(cfg.output).has_parent_path())
    fs::create_directories(fs::path(cfg.output).parent_path());
  save_checkpoint(model, cfg.output);
  std::string csv = cfg.output + ".loss.csv";
  write_loss_csv(history, csv);
  out << "wrote " << cfg.output << " and " << csv << " (" << history.size() << " steps)\n";
  return kExitOk;
}

int cmd_reconstruct(const PipelineConfig& cfg, std::ostream& out) {
  require_path(cfg.checkpoint, "--ckpt");
  Decoder model = load_checkpoint(cfg.checkpoint);
  int face_res = cfg.face_res > 0 ? cfg.face_res : cfg.out_res;
  DenseVolume volume = model.infer_volume(face_res, cfg.out_res);

  if (cfg.output.empty()) throw CLI::RequiredError("--out");
  fs::path prefix(cfg.output);
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  write_volume(volume, prefix.string() + ".vol");
  TriangleMesh mesh = marching_cubes(volume, cfg.iso);
  save_obj(mesh, prefix.string() + ".obj");
  out << "wrote " << prefix.string() << ".vol and " << prefix.string() << ".obj ("
      << mesh.triangles.size() << " triangles)\n";
  return kExitOk;
}

int cmd_volume_from_gt(const PipelineConfig& cfg, std::ostream& out, std::ostream& err) {
  TriangleMesh mesh = load_canonical_mesh(cfg, err);
  Bvh bvh(mesh);
  const int res = cfg.out_res;
  DenseVolume per_axis[3];
  for (int a = 0; a < 3; ++a) {
    AxisId axis = static_cast<AxisId>(a);
    per_axis[a] = stack_vectors(axis_occupancy_field(bvh, axis, res, res), axis, res, res, res);
  }
  DenseVolume volume = aggregate(per_axis[0], per_axis[1], per_axis[2], cfg.model.weights);

  if (cfg.output.empty()) throw CLI::RequiredError("--out");
  fs::path prefix(cfg.output);
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  write_volume(volume, prefix.string() + ".vol");
  TriangleMesh surface = marching_cubes(volume, cfg.iso);
  save_obj(surface, prefix.string() + ".obj");
  out << "wrote " << prefix.string() << ".vol and " << prefix.string() << ".obj ("
      << surface.triangles.size() << " triangles)\n";
  return kExitOk;
}

int cmd_eval(const PipelineConfig& cfg, std::ostream& out, const std::string& dump_dir) {
  require_path(cfg.pred, "--pred");
  require_path(cfg.gt, "--gt");
  TriangleMesh pred = load_obj(cfg.pred);
  TriangleMesh gt = load_obj(cfg.gt);

  PointCloud pred_cloud = sample_surface(pred, cfg.points, cfg.seed);
  PointCloud gt_cloud = sample_surface(gt, cfg.points, cfg.seed);
  Bvh gt_bvh(gt);

  NormalAverage avg = parse_average(cfg.normal_average);
  json report = {
      {"normal", normal_consistency(pred, gt, cfg.map_res, avg)},
      {"p2s", p2s(pred_cloud, gt_bvh)},
      {"chamfer", chamfer(pred_cloud, gt_cloud)},
      {"config",
       {{"points", cfg.points},
        {"map_res", cfg.map_res},
        {"seed", cfg.seed},
        {"normal_average", cfg.normal_average}}},
  };
  std::string text = report.dump(2) + "\n";
  out << text;
  if (!cfg.output.empty()) {
    std::ofstream f(cfg.output);
    if (!f) throw IoError("cannot open output file: " + cfg.output);
    f << text;
  }
  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    for (int view = 0; view < 6; ++view) {
      double yaw = 60.0 * view;
      std::string tag = std::to_string(static_cast<int>(yaw));
      write_pfm(render_normal_map(pred, yaw, cfg.map_res),
                (fs::path(dump_dir) / ("pred_yaw" + tag + ".pfm")).string());
      write_pfm(render_normal_map(gt, yaw, cfg.map_res),
                (fs::path(dump_dir) / ("gt_yaw" + tag + ".pfm")).string());
    }
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    PipelineConfig cfg = load_config(args);

    CLI::App app{"tri-directional occupancy-vector toolkit"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (flags override it)");

    auto add_common = [&](CLI::App* sub) {
      sub->add_option("--config", config_path, "JSON config file (flags override it)");
      sub->add_option("--seed", cfg.seed, "RNG seed");
      sub->add_option("--threads", cfg.threads, "worker thread cap (0 = hardware)");
    };

    CLI::App* fixtures = app.add_subcommand("fixtures", "write the bundled test solids");
    fixtures->add_option("--out", cfg.output, "output directory");

    CLI::App* gen = app.add_subcommand("gen", "generate ground-truth occupancy vectors");
    gen->add_option("--mesh", cfg.mesh, "input OBJ mesh");
    gen->add_option("--out", cfg.output, "output path prefix");
    gen->add_option("--n", cfg.n, "elements per vector");
    gen->add_option("--n-fine", cfg.n_fine, "fine z-axis vector length (0 = off)");
    gen->add_option("--samples", cfg.samples_per_axis, "anchors per face side");
    gen->add_option("--mode", cfg.mode, "face-grid | uniform-random");
    gen->add_option("--delta", cfg.delta, "adaptive mask scale");
    gen->add_option("--margin", cfg.margin, "canonical-normalization margin");
    add_common(gen);

    CLI::App* train_cmd = app.add_subcommand("train", "fit the decoder to generated vectors");
    train_cmd->add_option("--data", cfg.data, "dataset manifest from gen");
    train_cmd->add_option("--out", cfg.output, "checkpoint output path");
    train_cmd->add_option("--steps", cfg.model.steps, "optimizer steps");
    train_cmd->add_option("--lr", cfg.model.learning_rate, "learning rate");
    train_cmd->add_option("--batch", cfg.model.batch_size, "samples per bucket per step");
    CLI::Option* delta_opt = train_cmd->add_option("--delta", cfg.model.delta,
                                                   "adaptive mask scale (default: manifest)");
    train_cmd->add_option("--clip-norm", cfg.model.clip_norm, "gradient clip (<=0 disables)");
    add_common(train_cmd);

    CLI::App* rec = app.add_subcommand("reconstruct", "checkpoint -> volume + mesh");
    rec->add_option("--ckpt", cfg.checkpoint, "checkpoint path");
    rec->add_option("--out", cfg.output, "output path prefix (.vol/.obj added)");
    rec->add_option("--res", cfg.out_res, "output volume resolution");
    rec->add_option("--face-res", cfg.face_res, "anchor grid resolution (0 = --res)");
    rec->add_option("--iso", cfg.iso, "marching cubes iso level");
    add_common(rec);

    CLI::App* vgt = app.add_subcommand("volume-from-gt",
                                       "stack ground-truth vectors directly, bypassing the model");
    vgt->add_option("--mesh", cfg.mesh, "input OBJ mesh");
    vgt->add_option("--out", cfg.output, "output path prefix (.vol/.obj added)");
    vgt->add_option("--res", cfg.out_res, "volume resolution");
    vgt->add_option("--iso", cfg.iso, "marching cubes iso level");
    vgt->add_option("--margin", cfg.margin, "canonical-normalization margin");
    add_common(vgt);

    CLI::App* eval_cmd = app.add_subcommand("eval", "normal / p2s / chamfer report");
    eval_cmd->add_option("--pred", cfg.pred, "predicted OBJ mesh");
    eval_cmd->add_option("--gt", cfg.gt, "ground-truth OBJ mesh");
    eval_cmd->add_option("--points", cfg.points, "surface samples per cloud");
    eval_cmd->add_option("--map-res", cfg.map_res, "normal map resolution");
    eval_cmd->add_option("--normal-average", cfg.normal_average,
                         "union | intersection | full-frame");
    eval_cmd->add_option("--out", cfg.output, "also write the JSON report here");
    std::string dump_dir;
    eval_cmd->add_option("--dump-normal-maps", dump_dir, "write per-view PFM maps to this dir");
    add_common(eval_cmd);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app.parse(reversed);
    } catch (const CLI::ParseError& e) {
      int rc = app.exit(e, out, err);
      return rc == 0 ? kExitOk : kExitUsage;
    }

    set_default_threads(cfg.threads);

    if (fixtures->parsed()) return cmd_fixtures(cfg, out);
    if (gen->parsed()) return cmd_gen(cfg, out, err);
    if (train_cmd->parsed()) return cmd_train(cfg, out, err, delta_opt->count() > 0);
    if (rec->parsed()) return cmd_reconstruct(cfg, out);
    if (vgt->parsed()) return cmd_volume_from_gt(cfg, out, err);
    if (eval_cmd->parsed()) return cmd_eval(cfg, out, dump_dir);
    return kExitUsage;
  } catch (const NumericalAbort& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace tifu::cli
