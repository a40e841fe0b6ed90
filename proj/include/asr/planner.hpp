#pragma once

#include <optional>
#include <string>
#include <vector>

#include "asr/confidence.hpp"
#include "asr/core.hpp"
#include "asr/splat_map.hpp"
#include "asr/voxel_map.hpp"

namespace asr {

enum class PlannerMode { kFull, kNoRoi, kFbe, kCountOnlyConfidence };

std::string planner_mode_name(PlannerMode mode);
std::optional<PlannerMode> planner_mode_from_name(const std::string& name);

enum class CandidateOrigin { kRandom, kRoiFrontier, kRoiLowConfidence };

struct CandidateViewpoint {
  Pose pose;  // position snapped to the free-voxel lattice
  double utility = 0.0;
  std::vector<Vec3i> path;  // voxel indices, start to candidate
  double path_length = 0.0;
  CandidateOrigin origin = CandidateOrigin::kRandom;
};

struct ConeConfig {
  double d_min = 0.5;
  double d_max = 2.0;
  double max_angle = deg2rad(45.0);
  int samples_per_roi = 5;
};

struct PlannerConfig {
  double phi = 1000.0;    // exploration weight
  double delta = 0.5;     // travel-cost weight
  int n_total = 100;
  int n_roi_max = 30;
  double random_range = 0.5;                 // meters around the current position
  double random_pitch_band = deg2rad(45.0);  // pitch uniform in +-band
  ConeConfig cone;
  PlannerMode mode = PlannerMode::kFull;
  double k_thresh = 0.5;  // low-confidence ROI threshold
};

// Random candidates on lattice points within random_range of the current
// position (nearest lattice points as fallback when none are in range);
// yaw uniform, pitch uniform in the configured band. Throws on an empty
// lattice.
std::vector<CandidateViewpoint> sample_random(const Pose& current,
                                              const std::vector<Vec3>& lattice,
                                              int count, const PlannerConfig& cfg, Rng& rng);

// Cone sampling around ROI normals, nearest ROI first, snapped to the
// free lattice, deduplicated, looking at the ROI center; stops after
// n_roi_max kept candidates.
std::vector<CandidateViewpoint> sample_roi(const std::vector<RoiVoxel>& rois_sorted,
                                           const VoxelMap& voxel_map, const PlannerConfig& cfg,
                                           Rng& rng);

// Eq-style view utility: phi * (visible unexplored voxels / |V|) minus the
// mean rendered confidence. FBE mode drops the confidence term.
double utility(const CandidateViewpoint& candidate, const VoxelMap& voxel_map,
               const SplatMap& splat_map, const CameraIntrinsics& intr,
               const PlannerConfig& cfg);

struct AstarResult {
  std::vector<Vec3i> path;  // start..goal inclusive
  double length = 0.0;      // meters
};

// 6-connected shortest path over free voxels with Euclidean heuristic.
// Returns nullopt when unreachable; throws when start/goal are not free.
std::optional<AstarResult> astar(const VoxelMap& map, const Vec3i& start, const Vec3i& goal);

// Normalized utility minus weighted normalized travel cost. Utilities are
// shifted by -min(0, min utility) before normalizing; zero-sum
// normalizers contribute 0. Lowest index wins ties. Throws on empty
// candidates.
int select(const std::vector<CandidateViewpoint>& candidates, const PlannerConfig& cfg);

struct PlanDiagnostics {
  int n_random = 0;
  int n_roi_frontier = 0;
  int n_roi_low_conf = 0;
  int n_unreachable = 0;
  double winner_utility = 0.0;
  double winner_score = 0.0;
  double winner_utility_term = 0.0;
  double winner_cost_term = 0.0;
  CandidateOrigin winner_origin = CandidateOrigin::kRandom;
};

// Full planning pass: gather ROIs per mode, sample candidates, filter by
// reachability, evaluate utilities, select. Throws when no reachable
// candidate exists (mission-level starvation).
CandidateViewpoint plan(const Pose& current, const VoxelMap& voxel_map, const SplatMap& splat_map,
                        const std::vector<RoiVoxel>& low_conf_rois, const CameraIntrinsics& intr,
                        const PlannerConfig& cfg, Rng& rng, PlanDiagnostics* diag = nullptr);

}  // namespace asr
