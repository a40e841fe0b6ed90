#pragma once

#include <string>
#include <vector>

#include "asr/confidence.hpp"
#include "asr/core.hpp"
#include "asr/metrics.hpp"
#include "asr/planner.hpp"
#include "asr/scene_sim.hpp"
#include "asr/splat_map.hpp"
#include "asr/splat_train.hpp"
#include "asr/voxel_map.hpp"

namespace asr {

struct MissionConfig {
  std::string scene = "builtin:room";
  CameraIntrinsics intr;  // defaults: 64x64, fov [60,60], range [0.1, 5]
  PlannerConfig planner;
  TrainConfig train;
  double noise_sigma_slope = 0.01;
  int max_steps = 1000000000;
  double max_sim_time_s = 300.0;
  int eval_every = 10;          // steps
  double robot_speed = 1.0;     // m/s
  double mapping_time_s = 1.0;  // charged per step
  double planning_time_s = 0.5;
  uint64_t seed = 1;
  std::string out_dir = "out";
  int n_test_viewpoints = 100;
  int n_surface_samples = 10000;
  double voxel_size = 0.2;
  double visibility_w_min = 0.3;
  int prune_every = 5;
  int count_only_saturation = 10;
  double completeness_threshold = 0.02;
  bool measure_along_path = false;
  std::string dump_views_dir;    // empty = no dumps
  std::string dump_voxels_path;  // empty = <out>/voxels.txt
};

struct MissionOutcome {
  int status = 0;  // 0 = budget exhausted normally, 2 = planner starvation
  std::vector<MetricSample> samples;
  int steps_executed = 0;
  double final_sim_time_s = 0.0;
  double final_explored_fraction = 0.0;
};

// Live state of the mapping <-> planning loop, exposed for tests.
struct MissionState {
  GroundTruthScene scene;
  SplatMap splat_map;
  VoxelMap voxel_map;
  PoseHistory pose_history;
  std::vector<RgbdFrame> frame_history;
  ObservationLog observation_log;
  SurfelOptimizer optimizer;
  Pose current_pose;
  double sim_time_s = 0.0;
  int step = 0;
};

// Runs the full mission and writes metrics.csv, diagnostics.csv,
// surfels.txt, poses.txt and voxels.txt under out_dir. Deterministic for
// a fixed config (seed included).
MissionOutcome run_mission(const MissionConfig& cfg, MissionState* final_state = nullptr);

}  // namespace asr
