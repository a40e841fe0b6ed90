#pragma once

#include <vector>

#include "asr/core.hpp"
#include "asr/image.hpp"
#include "asr/scene_sim.hpp"
#include "asr/splat_map.hpp"

namespace asr {

constexpr double kPsnrCap = 99.0;

// 10 log10(1 / MSE) over all pixels and channels, capped at 99 dB.
double psnr(const ImageV3& rendered, const ImageV3& reference);

// Fraction of ground-truth surface samples within `threshold` of the point
// cloud fused from depth maps rendered at the training poses (pixel
// stride 2, spatial-hash nearest neighbour).
double completeness_ratio(const SplatMap& map, const std::vector<Pose>& training_poses,
                          const CameraIntrinsics& intr, const std::vector<Vec3>& gt_surface,
                          double threshold = 0.02, int pixel_stride = 2);

struct MetricSample {
  int mission_step = 0;
  double sim_time_s = 0.0;
  double psnr_mean = 0.0;
  double completeness = 0.0;
  int surfel_count = 0;
  double voxel_explored_fraction = 0.0;
};

// Held-out evaluation against cached noiseless ground-truth renders.
MetricSample evaluate(const SplatMap& map, const std::vector<Pose>& training_poses,
                      const std::vector<Pose>& test_poses,
                      const std::vector<ImageV3>& gt_test_rgb, const CameraIntrinsics& intr,
                      const std::vector<Vec3>& gt_surface, double completeness_threshold = 0.02);

}  // namespace asr
