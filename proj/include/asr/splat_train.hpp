#pragma once

#include <vector>

#include "asr/core.hpp"
#include "asr/image.hpp"
#include "asr/rng.hpp"
#include "asr/splat_map.hpp"

namespace asr {

struct LossWeights {
  double w_c = 1.0;
  double w_d = 0.8;
  double w_n = 0.1;
};

struct LossParts {
  double total = 0.0;
  double color = 0.0;
  double depth = 0.0;
  double normal = 0.0;
};

struct BilateralParams {
  int radius = 2;  // 5x5 window
  double sigma_space_px = 2.0;
  double sigma_range_m = 0.05;
};

// Camera-frame unit normals from a range image: bilateral filter, central
// differences of unprojected points, cross product, flipped toward the
// camera. Border and invalid pixels get the zero normal.
ImageV3 normal_from_depth(const ImageD& depth, const CameraIntrinsics& intr,
                          const BilateralParams& params = {});

// Weighted photometric / depth / normal loss. The normal term compares
// rendered normals against normals derived from the rendered depth and
// adds total variation of the raw rendered normal map. Terms with zero
// valid pixels contribute 0.
LossParts loss(const RenderedViews& rendered, const RgbdFrame& frame,
               const CameraIntrinsics& intr, const LossWeights& weights = {});

// Per-surfel gradients of the total loss; confidence k is non-trainable.
struct SurfelGradients {
  std::vector<Vec3> x;
  std::vector<Eigen::Vector4d> q;  // (w, x, y, z)
  std::vector<Vec2> s;
  std::vector<Vec3> c;
  std::vector<double> o;

  void resize_zero(size_t n);
  void add_scaled(const SurfelGradients& other, double scale);
};

// Analytic reverse-mode gradients of loss() through compositing,
// projection, the ray/plane depth, and the depth-derived normal chain.
// The L1 subgradient at 0 is 0.
SurfelGradients gradients(const SplatMap& map, const RgbdFrame& frame, const Pose& pose,
                          const CameraIntrinsics& intr, const LossWeights& weights = {},
                          LossParts* loss_out = nullptr);

struct TrainConfig {
  int iterations_per_step = 10;
  int recent_frames = 3;
  int random_frames = 5;
  double lr_x = 2e-4;
  double lr_q = 1e-3;
  double lr_s = 5e-3;
  double lr_c = 5e-3;
  double lr_o = 5e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 10.0;  // per-coordinate bound
  double opacity_min = 1e-4;
  double scale_min = 1e-3;  // 1 mm
  double scale_max = 0.5;
  LossWeights weights;
};

// Adam over the five trainable parameter groups. Moment arrays follow the
// surfel list through spawn (zero-initialised) and prune (remapped).
class SurfelOptimizer {
 public:
  void step(SplatMap& map, const SurfelGradients& grads, const TrainConfig& cfg);
  void resize(size_t n_surfels);             // keeps existing moments, zeros new ones
  void apply_remap(const std::vector<int>& remap);
  size_t size() const { return m_.size() / kParamsPerSurfel; }

  static constexpr int kParamsPerSurfel = 13;  // x3 q4 s2 c3 o1

 private:
  std::vector<double> m_, v_;
  long t_ = 0;
};

// One mapping-step optimization pass: iterations over batches of the most
// recent frames plus random distinct earlier frames. Returns the batch
// mean loss per iteration.
std::vector<LossParts> train_step(SplatMap& map, SurfelOptimizer& opt,
                                  const std::vector<RgbdFrame>& frame_history,
                                  const CameraIntrinsics& intr, const TrainConfig& cfg,
                                  Rng& rng);

}  // namespace asr
