#include "asr/mission.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace asr {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

double explored_fraction(const VoxelMap& map) {
  int observed = 0;
  Vec3i idx;
  for (idx.x() = 0; idx.x() < map.dims().x(); ++idx.x())
    for (idx.y() = 0; idx.y() < map.dims().y(); ++idx.y())
      for (idx.z() = 0; idx.z() < map.dims().z(); ++idx.z())
        if (map.observed(idx)) ++observed;
  return static_cast<double>(observed) / map.voxel_count();
}

std::vector<Vec3> frame_point_cloud(const RgbdFrame& frame, const CameraIntrinsics& intr) {
  const CameraFrame cam = CameraFrame::from_pose(frame.pose);
  std::vector<Vec3> points;
  points.reserve(frame.depth.size());
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x) {
      const double d = frame.depth.at(y, x);
      if (d == kInvalidDepth) continue;
      points.push_back(cam.origin + d * pixel_ray_world(cam, intr, x + 0.5, y + 0.5));
    }
  return points;
}

Pose initial_pose(const GroundTruthScene& scene, const VoxelMap& gt_voxels) {
  const Vec3 center = scene.bounds.center();
  double best = std::numeric_limits<double>::infinity();
  Pose pose;
  Vec3i idx;
  for (idx.x() = 0; idx.x() < gt_voxels.dims().x(); ++idx.x())
    for (idx.y() = 0; idx.y() < gt_voxels.dims().y(); ++idx.y())
      for (idx.z() = 0; idx.z() < gt_voxels.dims().z(); ++idx.z()) {
        if (gt_voxels.state(idx) != VoxelState::kFree) continue;
        const double d = (gt_voxels.index_to_center(idx) - center).squaredNorm();
        if (d < best) {
          best = d;
          pose.position = gt_voxels.index_to_center(idx);
        }
      }
  if (best == std::numeric_limits<double>::infinity())
    throw std::runtime_error("scene has no free voxel for the initial pose");
  return pose;
}

void dump_views(const SplatMap& map, const Pose& pose, const CameraIntrinsics& intr,
                const std::string& dir, int step) {
  const RenderedViews views = map.render(pose, intr, false);
  const std::string base = dir + "/step_" + std::to_string(step);
  write_ppm(base + "_rgb.ppm", views.color);
  write_pgm(base + "_depth.pgm", views.depth, intr.d_far);
  ImageV3 nvis(views.normal.height(), views.normal.width(), Vec3::Zero());
  for (size_t i = 0; i < nvis.size(); ++i) nvis[i] = 0.5 * (views.normal[i] + Vec3(1, 1, 1));
  write_ppm(base + "_normal.ppm", nvis);
  write_pgm(base + "_opacity.pgm", views.opacity, 1.0);
  double kmax = 0.0;
  for (size_t i = 0; i < views.confidence.size(); ++i) kmax = std::max(kmax, views.confidence[i]);
  write_pgm(base + "_confidence.pgm", views.confidence, kmax > 0.0 ? kmax : 1.0);
}

}  // namespace

MissionOutcome run_mission(const MissionConfig& cfg, MissionState* final_state) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  if (!cfg.dump_views_dir.empty()) fs::create_directories(cfg.dump_views_dir);

  MissionState st;
  st.scene = load_scene(cfg.scene);
  VoxelMapConfig vcfg;
  vcfg.voxel_size = cfg.voxel_size;
  st.voxel_map = VoxelMap(st.scene.bounds, vcfg);

  Rng root(cfg.seed);
  Rng rng_sensor = root.split("sensor");
  Rng rng_training = root.split("training");
  Rng rng_planner = root.split("planner");
  Rng rng_eval = root.split("evaluation");

  // ground-truth artifacts fixed at mission start
  const VoxelMap gt_voxels = ground_truth_voxelization(st.scene, cfg.voxel_size);
  st.current_pose = initial_pose(st.scene, gt_voxels);
  const std::vector<Pose> test_poses =
      sample_test_viewpoints(st.scene, gt_voxels, cfg.n_test_viewpoints, rng_eval);
  std::vector<ImageV3> gt_test_rgb;
  gt_test_rgb.reserve(test_poses.size());
  for (const Pose& p : test_poses) {
    Rng zero_noise(0);  // noiseless oracle renders
    gt_test_rgb.push_back(render_gt(st.scene, p, cfg.intr, 0.0, zero_noise).rgb);
  }
  std::vector<Vec3> gt_surface;
  {
    const auto samples = sample_surface_points(st.scene, cfg.n_surface_samples, rng_eval);
    gt_surface.reserve(samples.size());
    for (const auto& s : samples) gt_surface.push_back(s.point);
  }

  const ConfidenceMode conf_mode = cfg.planner.mode == PlannerMode::kCountOnlyConfidence
                                       ? ConfidenceMode::kCountOnly
                                       : ConfidenceMode::kFull;

  std::ofstream metrics_csv(cfg.out_dir + "/metrics.csv");
  metrics_csv << "step,sim_time_s,psnr_db,completeness,n_surfels,explored_frac,"
                 "loss_c,loss_d,loss_n,planner_mode,winner_kind,path_len_m\n";
  std::ofstream diag_csv(cfg.out_dir + "/diagnostics.csv");
  diag_csv << "step,sim_time_s,loss_c,loss_d,loss_n,n_surfels,n_random,n_roi_frontier,"
              "n_roi_low_conf,n_unreachable,winner_utility,winner_score,path_len_m";
  for (int b = 0; b < 20; ++b) diag_csv << ",khist_" << b;
  diag_csv << "\n";

  MissionOutcome outcome;
  LossParts last_loss;
  std::string last_winner_kind = "none";
  double last_path_len = 0.0;

  auto emit_metrics = [&]() {
    MetricSample sample = evaluate(st.splat_map, st.pose_history, test_poses, gt_test_rgb,
                                   cfg.intr, gt_surface, cfg.completeness_threshold);
    sample.mission_step = st.step;
    sample.sim_time_s = st.sim_time_s;
    sample.voxel_explored_fraction = explored_fraction(st.voxel_map);
    outcome.samples.push_back(sample);
    metrics_csv << st.step << "," << fmt(st.sim_time_s) << "," << fmt(sample.psnr_mean) << ","
                << fmt(sample.completeness) << "," << sample.surfel_count << ","
                << fmt(sample.voxel_explored_fraction) << "," << fmt(last_loss.color) << ","
                << fmt(last_loss.depth) << "," << fmt(last_loss.normal) << ","
                << planner_mode_name(cfg.planner.mode) << "," << last_winner_kind << ","
                << fmt(last_path_len) << "\n";
    if (!cfg.dump_views_dir.empty())
      dump_views(st.splat_map, st.current_pose, cfg.intr, cfg.dump_views_dir, st.step);
  };

  auto capture_and_integrate = [&](const Pose& pose) {
    RgbdFrame frame = render_gt(st.scene, pose, cfg.intr, cfg.noise_sigma_slope, rng_sensor);
    frame.frame_index = static_cast<int>(st.frame_history.size());
    st.pose_history.push_back(pose);
    st.frame_history.push_back(std::move(frame));
    st.voxel_map.integrate_point_cloud(pose.position,
                                       frame_point_cloud(st.frame_history.back(), cfg.intr));
  };

  emit_metrics();  // step 0, empty map

  int last_eval_step = 0;
  while (st.step < cfg.max_steps && st.sim_time_s < cfg.max_sim_time_s) {
    ++st.step;
    const int pose_index = static_cast<int>(st.pose_history.size());
    capture_and_integrate(st.current_pose);
    const RgbdFrame& frame = st.frame_history.back();

    // densify where coverage or accuracy is lacking
    const RenderedViews rendered = st.splat_map.render(st.current_pose, cfg.intr, false);
    const DensifyMask mask = densify_mask(rendered, frame);
    const ImageV3 meas_normals = normal_from_depth(frame.depth, cfg.intr);
    spawn_surfels(st.splat_map, frame, mask, meas_normals, cfg.intr, st.step);
    st.optimizer.resize(st.splat_map.size());

    const auto trace = train_step(st.splat_map, st.optimizer, st.frame_history, cfg.intr,
                                  cfg.train, rng_training);
    if (!trace.empty()) last_loss = trace.back();

    if (cfg.prune_every > 0 && st.step % cfg.prune_every == 0) {
      const auto [removed, remap] =
          st.splat_map.prune_invisible(st.pose_history, cfg.intr, cfg.visibility_w_min);
      if (removed > 0) {
        st.observation_log.apply_remap(remap);
        st.optimizer.apply_remap(remap);
      }
    }

    update_observations(st.observation_log, st.splat_map, pose_index, st.current_pose, cfg.intr,
                        cfg.visibility_w_min);
    refresh_confidences(st.splat_map, st.observation_log, st.pose_history, cfg.intr.d_far,
                        conf_mode, cfg.count_only_saturation);

    if (cfg.eval_every > 0 && st.step % cfg.eval_every == 0) {
      emit_metrics();
      last_eval_step = st.step;
    }

    // plan the next viewpoint
    PlanDiagnostics diag;
    CandidateViewpoint next;
    try {
      const std::vector<RoiVoxel> low_conf =
          low_confidence_rois(st.splat_map, st.voxel_map, cfg.planner.k_thresh);
      next = plan(st.current_pose, st.voxel_map, st.splat_map, low_conf, cfg.intr, cfg.planner,
                  rng_planner, &diag);
    } catch (const std::exception& e) {
      outcome.status = 2;  // planner starvation: stop with partial outputs
      break;
    }

    switch (diag.winner_origin) {
      case CandidateOrigin::kRandom: last_winner_kind = "random"; break;
      case CandidateOrigin::kRoiFrontier: last_winner_kind = "roi_frontier"; break;
      case CandidateOrigin::kRoiLowConfidence: last_winner_kind = "roi_low_conf"; break;
    }
    last_path_len = next.path_length;

    // confidence histogram over [0, max k]
    double k_max = 0.0;
    for (const Surfel& g : st.splat_map.surfels()) k_max = std::max(k_max, g.k);
    int hist[20] = {0};
    for (const Surfel& g : st.splat_map.surfels()) {
      const int bin = k_max > 0.0
                          ? std::min(19, static_cast<int>(std::floor(g.k / k_max * 20.0)))
                          : 0;
      ++hist[bin];
    }
    diag_csv << st.step << "," << fmt(st.sim_time_s) << "," << fmt(last_loss.color) << ","
             << fmt(last_loss.depth) << "," << fmt(last_loss.normal) << "," << st.splat_map.size()
             << "," << diag.n_random << "," << diag.n_roi_frontier << "," << diag.n_roi_low_conf
             << "," << diag.n_unreachable << "," << fmt(diag.winner_utility) << ","
             << fmt(diag.winner_score) << "," << fmt(next.path_length);
    for (int b = 0; b < 20; ++b) diag_csv << "," << hist[b];
    diag_csv << "\n";

    st.sim_time_s +=
        cfg.mapping_time_s + cfg.planning_time_s + next.path_length / cfg.robot_speed;

    if (cfg.measure_along_path && next.path.size() > 2) {
      // capture at intermediate waypoints, looking along the travel direction
      for (size_t i = 1; i + 1 < next.path.size(); ++i) {
        const Vec3 here = st.voxel_map.index_to_center(next.path[i]);
        const Vec3 ahead = st.voxel_map.index_to_center(next.path[i + 1]);
        Pose wp;
        wp.position = here;
        const Vec3 d = ahead - here;
        wp.yaw = std::atan2(d.y(), d.x());
        wp.pitch = 0.0;
        const int wp_index = static_cast<int>(st.pose_history.size());
        capture_and_integrate(wp);
        update_observations(st.observation_log, st.splat_map, wp_index, wp, cfg.intr,
                            cfg.visibility_w_min);
      }
    }

    st.current_pose = next.pose;
  }

  if (last_eval_step != st.step || outcome.samples.empty()) emit_metrics();

  // final artifacts
  {
    std::ofstream f(cfg.out_dir + "/surfels.txt");
    st.splat_map.save(f);
  }
  {
    std::ofstream f(cfg.out_dir + "/poses.txt");
    f.precision(17);
    for (const Pose& p : st.pose_history)
      f << p.position.x() << " " << p.position.y() << " " << p.position.z() << " " << p.yaw << " "
        << p.pitch << "\n";
  }
  {
    const std::string path =
        cfg.dump_voxels_path.empty() ? cfg.out_dir + "/voxels.txt" : cfg.dump_voxels_path;
    std::ofstream f(path);
    f.precision(17);
    st.voxel_map.dump(f);
  }

  outcome.steps_executed = st.step;
  outcome.final_sim_time_s = st.sim_time_s;
  outcome.final_explored_fraction = explored_fraction(st.voxel_map);
  if (final_state) *final_state = std::move(st);
  return outcome;
}

}  // namespace asr
