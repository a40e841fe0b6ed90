#pragma once

#include <vector>

#include "asr/core.hpp"
#include "asr/image.hpp"

namespace asr {

enum class VoxelState { kUnknown, kFree, kOccupied };

enum class RoiKind { kFrontier, kLowConfidence };

// Region-of-interest voxel used to seed targeted viewpoint sampling.
struct RoiVoxel {
  Vec3 center;
  Vec3 normal;  // unit; most informative viewing direction
  RoiKind kind = RoiKind::kFrontier;
  double range_to_robot = 0.0;
};

struct VoxelMapConfig {
  double voxel_size = 0.2;
  double log_odds_hit = 0.85;
  double log_odds_miss = -0.4;
  double log_odds_min = -2.0;
  double log_odds_max = 3.5;
};

// Coarse probabilistic occupancy grid. Unknown means never observed;
// observed voxels split into free (p < 0.5) and occupied (p >= 0.5).
class VoxelMap {
 public:
  VoxelMap() = default;
  VoxelMap(const Aabb& bounds, const VoxelMapConfig& cfg = {});

  const Vec3& origin() const { return origin_; }
  double voxel_size() const { return cfg_.voxel_size; }
  const Vec3i& dims() const { return dims_; }
  int voxel_count() const { return dims_.x() * dims_.y() * dims_.z(); }
  const VoxelMapConfig& config() const { return cfg_; }

  bool in_bounds(const Vec3i& idx) const {
    return (idx.array() >= 0).all() && (idx.array() < dims_.array()).all();
  }
  bool contains_point(const Vec3& p) const;

  // floor() cell lookup; points on the outer max face clamp inward
  Vec3i point_to_index(const Vec3& p) const;
  Vec3 index_to_center(const Vec3i& idx) const;

  size_t flat(const Vec3i& idx) const {
    return (static_cast<size_t>(idx.x()) * dims_.y() + idx.y()) * dims_.z() + idx.z();
  }

  VoxelState state(const Vec3i& idx) const;
  double log_odds(const Vec3i& idx) const { return log_odds_[flat(idx)]; }
  bool observed(const Vec3i& idx) const { return observed_[flat(idx)] != 0; }

  // Probabilistic update along each sensor ray: miss updates on traversed
  // voxels, hit update on the endpoint voxel. Endpoints outside the map
  // clip the ray at the boundary and apply only misses.
  void integrate_point_cloud(const Vec3& sensor_origin, const std::vector<Vec3>& points);

  // Direct single-voxel updates (exposed for tests and oracles).
  void apply_hit(const Vec3i& idx);
  void apply_miss(const Vec3i& idx);

  // Free voxels with at least one unknown 6-neighbour. The normal is the
  // normalized mean direction toward free 6-neighbours (pointing into
  // known-free space); when that sum degenerates, the negated mean
  // direction toward unknown neighbours is used, then +x as a last resort.
  std::vector<RoiVoxel> frontiers() const;
  std::vector<Vec3i> frontier_indices() const;

  // Centres of all free voxels: the planning lattice.
  std::vector<Vec3> free_lattice() const;

  // Number of unknown voxels whose centre falls in the camera frustum,
  // within [d_near, d_far] range, and is not occluded by the rendered
  // depth (invalid depth = no occlusion). Iteration is restricted to the
  // axis-aligned bounds of the view frustum; the result matches a full
  // scan.
  int count_unexplored_visible(const Pose& pose, const ImageD& rendered_depth,
                               const CameraIntrinsics& intr) const;

  // One record per observed voxel: "i j k log_odds state".
  void dump(std::ostream& os) const;

 private:
  Vec3 origin_{0.0, 0.0, 0.0};
  Vec3i dims_{0, 0, 0};
  VoxelMapConfig cfg_;
  std::vector<double> log_odds_;
  std::vector<uint8_t> observed_;

  void update_voxel(const Vec3i& idx, double delta);
};

// Marks every voxel intersecting scene geometry as occupied and the rest
// as free (all observed). Used for ground-truth free-space queries and
// the reachability census; the online map starts unknown instead.
class GroundTruthScene;
VoxelMap ground_truth_voxelization(const GroundTruthScene& scene, double voxel_size = 0.2);

}  // namespace asr
