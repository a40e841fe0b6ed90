// Command-line front end: mission runner, offline evaluation, channel
// rendering, gradient checking and multi-seed benchmarking.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "asr/gradcheck.hpp"
#include "asr/mission.hpp"

namespace {

using namespace asr;

SplatMap load_map_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open map file: " + path);
  return SplatMap::load(f);
}

std::vector<Pose> load_poses_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open poses file: " + path);
  std::vector<Pose> poses;
  Pose p;
  while (f >> p.position.x() >> p.position.y() >> p.position.z() >> p.yaw >> p.pitch)
    poses.push_back(p);
  return poses;
}

std::vector<uint64_t> parse_seeds(const std::string& spec) {
  std::vector<uint64_t> seeds;
  const auto dots = spec.find("..");
  if (dots != std::string::npos) {
    const uint64_t lo = std::stoull(spec.substr(0, dots));
    const uint64_t hi = std::stoull(spec.substr(dots + 2));
    for (uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    return seeds;
  }
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
  return seeds;
}

int cmd_gradcheck(uint64_t seed, int n_scenes) {
  const GradCheckReport r = run_gradcheck(
      seed, n_scenes, 1e-4, 1e-3, 1e-6, [](const std::string& line) { std::cerr << line << "\n"; });
  if (r.failures == 0) {
    std::cout << "gradcheck passed: " << r.coordinates_checked << " coordinates over "
              << r.scenes << " scenes, worst rel error " << r.worst_rel_error << "\n";
    return 0;
  }
  std::cout << "gradcheck failed: " << r.failures << " of " << r.coordinates_checked
            << " coordinates\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-surfel active reconstruction sandbox"};
  app.require_subcommand(1);

  MissionConfig cfg;
  std::string mode_str = "full";
  int res = 64;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--scene", cfg.scene, "scene file or builtin:room");
    cmd->add_option("--seed", cfg.seed, "root rng seed");
    cmd->add_option("--res", res, "image resolution (square)");
  };

  // ---- run ----
  auto* run = app.add_subcommand("run", "run one active reconstruction mission");
  add_common(run);
  run->add_option("--mode", mode_str, "planner mode: full|no_roi|fbe|count_only");
  run->add_option("--steps", cfg.max_steps, "maximum planning steps");
  run->add_option("--sim-time", cfg.max_sim_time_s, "simulated time budget [s]");
  run->add_option("--eval-every", cfg.eval_every, "evaluation period in steps");
  run->add_option("--out", cfg.out_dir, "output directory");
  run->add_option("--noise", cfg.noise_sigma_slope, "depth noise sigma slope");
  run->add_option("--n-test", cfg.n_test_viewpoints, "held-out test viewpoints");
  run->add_option("--dump-views", cfg.dump_views_dir, "dump channel images to this directory");
  run->add_option("--dump-voxels", cfg.dump_voxels_path, "voxel dump path");
  run->add_flag("--measure-along-path", cfg.measure_along_path,
                "capture frames at intermediate path waypoints");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "evaluate a saved surfel map");
  std::string map_path, poses_path;
  int n_test_eval = 100;
  add_common(ev);
  ev->add_option("--map", map_path, "surfels.txt from a run")->required();
  ev->add_option("--poses", poses_path, "poses.txt from a run")->required();
  ev->add_option("--n-test", n_test_eval, "held-out test viewpoints");

  // ---- render ----
  auto* rd = app.add_subcommand("render", "dump channel images at a pose");
  std::string pose_str = "2,2,1.3,0,0";
  std::string render_out = "render_out";
  add_common(rd);
  rd->add_option("--map", map_path, "surfels.txt from a run")->required();
  rd->add_option("--pose", pose_str, "x,y,z,yaw_deg,pitch_deg");
  rd->add_option("--out", render_out, "output directory");

  // ---- gradcheck ----
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  uint64_t gc_seed = 7;
  int gc_scenes = 10;
  gc->add_option("--seed", gc_seed, "rng seed");
  gc->add_option("--scenes", gc_scenes, "number of random scenes");

  // ---- bench ----
  auto* bn = app.add_subcommand("bench", "multi-seed multi-mode comparison");
  std::string modes_str = "full,no_roi,fbe";
  std::string seeds_str = "1..5";
  add_common(bn);
  bn->add_option("--modes", modes_str, "comma-separated planner modes");
  bn->add_option("--seeds", seeds_str, "seed list: a..b or comma-separated");
  bn->add_option("--steps", cfg.max_steps, "maximum planning steps");
  bn->add_option("--sim-time", cfg.max_sim_time_s, "simulated time budget [s]");
  bn->add_option("--out", cfg.out_dir, "output directory");
  bn->add_option("--n-test", cfg.n_test_viewpoints, "held-out test viewpoints");

  CLI11_PARSE(app, argc, argv);

  cfg.intr.width = res;
  cfg.intr.height = res;

  try {
    if (app.got_subcommand(run)) {
      const auto mode = planner_mode_from_name(mode_str);
      if (!mode) {
        std::cerr << "unknown mode: " << mode_str << "\n";
        return 1;
      }
      cfg.planner.mode = *mode;
      const MissionOutcome out = run_mission(cfg);
      const auto& last = out.samples.back();
      std::cout << "steps=" << out.steps_executed << " sim_time=" << out.final_sim_time_s
                << "s psnr=" << last.psnr_mean << "dB completeness=" << last.completeness
                << " explored=" << out.final_explored_fraction
                << " surfels=" << last.surfel_count << "\n";
      std::cout << "outputs in " << cfg.out_dir << "\n";
      return out.status;
    }

    if (app.got_subcommand(ev)) {
      const SplatMap map = load_map_file(map_path);
      const std::vector<Pose> poses = load_poses_file(poses_path);
      const GroundTruthScene scene = load_scene(cfg.scene);
      const VoxelMap gt_voxels = ground_truth_voxelization(scene, cfg.voxel_size);
      Rng rng(cfg.seed);
      Rng rng_eval = rng.split("evaluation");
      const auto test_poses = sample_test_viewpoints(scene, gt_voxels, n_test_eval, rng_eval);
      std::vector<ImageV3> gt_rgb;
      for (const Pose& p : test_poses) {
        Rng zero(0);
        gt_rgb.push_back(render_gt(scene, p, cfg.intr, 0.0, zero).rgb);
      }
      std::vector<Vec3> surface;
      const auto samples = sample_surface_points(scene, cfg.n_surface_samples, rng_eval);
      for (const auto& s : samples) surface.push_back(s.point);
      const MetricSample m = evaluate(map, poses, test_poses, gt_rgb, cfg.intr, surface);
      std::cout << "psnr=" << m.psnr_mean << "dB completeness=" << m.completeness
                << " surfels=" << m.surfel_count << "\n";
      return 0;
    }

    if (app.got_subcommand(rd)) {
      const SplatMap map = load_map_file(map_path);
      Pose pose;
      double yaw_deg = 0.0, pitch_deg = 0.0;
      if (std::sscanf(pose_str.c_str(), "%lf,%lf,%lf,%lf,%lf", &pose.position.x(),
                      &pose.position.y(), &pose.position.z(), &yaw_deg, &pitch_deg) != 5) {
        std::cerr << "bad --pose, expected x,y,z,yaw_deg,pitch_deg\n";
        return 1;
      }
      pose.yaw = deg2rad(yaw_deg);
      pose.pitch = deg2rad(pitch_deg);
      std::filesystem::create_directories(render_out);
      const RenderedViews views = map.render(pose, cfg.intr, false);
      write_ppm(render_out + "/rgb.ppm", views.color);
      write_pgm(render_out + "/depth.pgm", views.depth, cfg.intr.d_far);
      ImageV3 nvis(views.normal.height(), views.normal.width(), Vec3::Zero());
      for (size_t i = 0; i < nvis.size(); ++i) nvis[i] = 0.5 * (views.normal[i] + Vec3(1, 1, 1));
      write_ppm(render_out + "/normal.ppm", nvis);
      write_pgm(render_out + "/opacity.pgm", views.opacity, 1.0);
      double kmax = 0.0;
      for (size_t i = 0; i < views.confidence.size(); ++i)
        kmax = std::max(kmax, views.confidence[i]);
      write_pgm(render_out + "/confidence.pgm", views.confidence, kmax > 0.0 ? kmax : 1.0);
      std::cout << "wrote channel images to " << render_out << "\n";
      return 0;
    }

    if (app.got_subcommand(gc)) return cmd_gradcheck(gc_seed, gc_scenes);

    if (app.got_subcommand(bn)) {
      std::filesystem::create_directories(cfg.out_dir);
      std::vector<std::string> modes;
      {
        std::stringstream ss(modes_str);
        std::string tok;
        while (std::getline(ss, tok, ',')) modes.push_back(tok);
      }
      const std::vector<uint64_t> seeds = parse_seeds(seeds_str);
      std::ofstream summary(cfg.out_dir + "/bench_summary.csv");
      summary << "mode,seed,psnr_db,completeness,explored_frac,n_surfels,steps,status\n";

      struct Agg {
        std::vector<double> psnr, comp, expl;
      };
      std::map<std::string, Agg> agg;
      for (const std::string& m : modes) {
        const auto mode = planner_mode_from_name(m);
        if (!mode) {
          std::cerr << "unknown mode: " << m << "\n";
          return 1;
        }
        for (uint64_t s : seeds) {
          MissionConfig c = cfg;
          c.planner.mode = *mode;
          c.seed = s;
          c.out_dir = cfg.out_dir + "/" + m + "_seed" + std::to_string(s);
          const MissionOutcome out = run_mission(c);
          const auto& last = out.samples.back();
          summary << m << "," << s << "," << last.psnr_mean << "," << last.completeness << ","
                  << out.final_explored_fraction << "," << last.surfel_count << ","
                  << out.steps_executed << "," << out.status << "\n";
          summary.flush();
          agg[m].psnr.push_back(last.psnr_mean);
          agg[m].comp.push_back(last.completeness);
          agg[m].expl.push_back(out.final_explored_fraction);
          std::cout << m << " seed " << s << ": psnr=" << last.psnr_mean
                    << " completeness=" << last.completeness << "\n";
        }
      }
      auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
      };
      auto stdev = [&](const std::vector<double>& v) {
        const double m = mean(v);
        double acc = 0.0;
        for (double x : v) acc += (x - m) * (x - m);
        return std::sqrt(acc / v.size());
      };
      for (const auto& [m, a] : agg) {
        summary << m << ",mean," << mean(a.psnr) << "," << mean(a.comp) << "," << mean(a.expl)
                << ",,,\n";
        summary << m << ",std," << stdev(a.psnr) << "," << stdev(a.comp) << "," << stdev(a.expl)
                << ",,,\n";
      }
      std::cout << "summary in " << cfg.out_dir << "/bench_summary.csv\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

