#pragma once

#include <vector>

#include "asr/core.hpp"
#include "asr/splat_map.hpp"
#include "asr/voxel_map.hpp"

namespace asr {

// Append-only list of every executed viewpoint.
using PoseHistory = std::vector<Pose>;

// Per-surfel sorted sets of observing viewpoint indices into the pose
// history.
class ObservationLog {
 public:
  void resize(size_t n_surfels) { sets_.resize(n_surfels); }
  size_t size() const { return sets_.size(); }
  const std::vector<int>& observers(size_t surfel) const { return sets_[surfel]; }

  void add_observation(size_t surfel, int pose_index);

  // Compacts the log after a prune; remap[i] < 0 drops surfel i.
  void apply_remap(const std::vector<int>& remap);

 private:
  std::vector<std::vector<int>> sets_;  // sorted, unique
};

// Records pose_index in the set of every surfel visible from the pose
// (max per-pixel rendering contribution >= w_min).
void update_observations(ObservationLog& log, const SplatMap& map, int pose_index,
                         const Pose& pose, const CameraIntrinsics& intr, double w_min = 0.3);

// Distance- and direction-weighted confidence of one surfel:
//   gamma = sum_j max(0, 1 - d_ij / d_far) * max(0, n . v_ij)
//   beta  = 1 - |mean_j v_ij|
//   k     = gamma * exp(beta)
// Empty observer sets give k = 0; viewpoints coincident with the surfel
// center are skipped.
double confidence(const Surfel& surfel, const std::vector<int>& observers,
                  const PoseHistory& history, double d_far);

// Ablation variant: k depends only on the observation count, saturating
// at n_sat.
double confidence_count_only(const std::vector<int>& observers, int n_sat = 10);

enum class ConfidenceMode { kFull, kCountOnly };

// Recomputes every surfel's k in place.
void refresh_confidences(SplatMap& map, const ObservationLog& log, const PoseHistory& history,
                         double d_far, ConfidenceMode mode = ConfidenceMode::kFull,
                         int count_only_saturation = 10);

// Occupied voxels holding at least one surfel with k < k_thresh. The ROI
// normal averages those surfels' normals after flipping each into the
// hemisphere of the first; near-cancelling voxels (|mean| < 0.1) are
// dropped.
std::vector<RoiVoxel> low_confidence_rois(const SplatMap& map, const VoxelMap& voxel_map,
                                          double k_thresh = 0.5);

}  // namespace asr
