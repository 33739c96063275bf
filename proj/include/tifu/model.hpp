#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tifu/occupancy.hpp"
#include "tifu/volume.hpp"

namespace tifu {

// Training aborted on a non-finite loss.
struct NumericalAbort : std::runtime_error {
  int step;
  explicit NumericalAbort(int step_)
      : std::runtime_error("non-finite loss at step " + std::to_string(step_)), step(step_) {}
};

// Decoder dimensions plus loss/optimizer settings. The defaults are the
// desk-scale configuration; n_coarse/n_fine scale up to 128/512.
struct ModelConfig {
  int n_coarse = 32;       // coarse vector length
  int n_fine = 64;         // fine (depth-axis) vector length
  int grid_res = 16;       // coarse feature grid resolution (cubed)
  int grid_channels = 16;  // channels sampled per ray station
  int stations = 8;        // ray stations; feature dim = stations * grid_channels
  int fine_res = 32;       // fine feature grid resolution (squared)
  int fine_channels = 64;
  int hidden = 256;
  int omega_dim = 64;      // linear tap off the depth MLP's second hidden layer

  double delta = 0.05;     // adaptive-mask scale
  AggregationWeights weights;  // volume aggregation and per-axis loss weights

  double learning_rate = 1e-3;
  int steps = 4000;
  int batch_size = 16;     // per bucket (three coarse axes + fine)
  uint64_t seed = 1;
  double clip_norm = 10.0;  // global gradient norm; <= 0 disables

  int feature_dim() const { return stations * grid_channels; }
  int fine_input_dim() const { return fine_channels + omega_dim; }
  void validate() const;
};

struct TensorRef {
  std::string name;
  std::vector<int> shape;
  size_t offset = 0;
  size_t size = 0;
};

// Trainable decoder: a coarse 3D feature grid, a fine 2D feature grid, three
// per-axis coarse MLPs (feature_dim -> hidden -> hidden -> n_coarse), an
// omega tap off the depth MLP, and the fine MLP
// (fine_channels + omega_dim -> hidden -> n_fine). All parameters live in one
// flat buffer addressed through the tensor manifest.
class Decoder {
 public:
  explicit Decoder(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  const std::vector<TensorRef>& tensors() const { return tensors_; }
  const TensorRef& tensor(const std::string& name) const;
  std::span<const double> tensor_view(const TensorRef& t) const {
    return {params_.data() + t.offset, t.size};
  }

  void init_params(uint64_t seed);

  // Trilinear samples of all grid channels at the `stations` Eq-3 grid points
  // along the ray through x, concatenated in station order.
  std::vector<double> ray_aligned_features(const Vec3& x, AxisId axis) const;

  struct CoarseOut {
    std::vector<double> probs;  // n_coarse, in (0,1)
    std::vector<double> omega;  // omega_dim; filled for the Z axis only
  };
  CoarseOut coarse_forward(const std::vector<double>& features, AxisId axis) const;

  // Bilinear fine-grid sample at (x.x, x.y) concatenated with omega, through
  // the fine MLP. omega must come from coarse_forward on the Z axis.
  std::vector<double> fine_forward(const Vec3& x, const std::vector<double>& omega) const;

  // Full per-anchor inference paths.
  std::vector<double> infer_coarse_vector(const Vec3& anchor, AxisId axis) const;
  std::vector<double> infer_fine_vector(const Vec3& anchor) const;

  // Reconstruction: x/y vectors from the coarse module, z vectors from the
  // fine module, each resized to out_res, stacked and aggregated with the
  // configured weights. face_res is the anchor grid resolution per face.
  DenseVolume infer_volume(int face_res, int out_res) const;

 private:
  TensorRef add_tensor(const std::string& name, std::vector<int> shape);

  ModelConfig cfg_;
  std::vector<double> params_;
  std::vector<TensorRef> tensors_;

  friend struct DecoderKernels;
};

// Weighted binary cross entropy, summed over elements: predictions are
// clamped to [1e-7, 1 - 1e-7]; mask multiplies the positive (inside) term.
double weighted_bce(std::span<const double> probs, std::span<const uint8_t> targets,
                    std::span<const double> mask);

// One training batch: per-axis coarse samples at n_coarse and depth-axis fine
// samples at n_fine.
struct TrainBatch {
  std::vector<const OccupancyVector*> coarse[3];
  std::vector<const OccupancyVector*> fine;
};

struct LossBreakdown {
  double lx = 0.0, ly = 0.0, lz = 0.0, lfine = 0.0, total = 0.0;
};

// Eq-style total: alpha*Lx + beta*Ly + gamma*Lz + Lfine, each bucket averaged
// over its samples. Empty buckets contribute zero (warned once by train()).
LossBreakdown total_loss(const Decoder& model, const TrainBatch& batch);

// Reverse-mode gradient of the total loss with respect to every parameter;
// grad is resized and overwritten. Returns the same breakdown as total_loss.
LossBreakdown loss_and_gradient(const Decoder& model, const TrainBatch& batch,
                                std::vector<double>& grad);

struct TrainData {
  const VectorDataset* coarse[3] = {nullptr, nullptr, nullptr};  // per axis, at n_coarse
  const VectorDataset* fine = nullptr;                           // z axis, at n_fine
};

struct StepLoss {
  int step;
  LossBreakdown loss;
};

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) with seeded shuffling and global
// gradient-norm clipping. Bit-identical histories for a fixed seed at any
// thread count. Throws NumericalAbort when the loss turns non-finite.
std::vector<StepLoss> train(Decoder& model, const TrainData& data, std::ostream* log = nullptr);

void write_loss_csv(const std::vector<StepLoss>& history, const std::string& path);

// Checkpoint container: magic "TIFM", version u32 = 1, u64 manifest length,
// JSON manifest (config + tensor shapes), then all tensors as little-endian
// f32 in manifest order.
void save_checkpoint(const Decoder& model, const std::string& path);
Decoder load_checkpoint(const std::string& path);

}  // namespace tifu
