#include "asr/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace asr {

std::string planner_mode_name(PlannerMode mode) {
  switch (mode) {
    case PlannerMode::kFull: return "full";
    case PlannerMode::kNoRoi: return "no_roi";
    case PlannerMode::kFbe: return "fbe";
    case PlannerMode::kCountOnlyConfidence: return "count_only";
  }
  return "unknown";
}

std::optional<PlannerMode> planner_mode_from_name(const std::string& name) {
  if (name == "full") return PlannerMode::kFull;
  if (name == "no_roi") return PlannerMode::kNoRoi;
  if (name == "fbe") return PlannerMode::kFbe;
  if (name == "count_only") return PlannerMode::kCountOnlyConfidence;
  return std::nullopt;
}

namespace {

Pose look_at(const Vec3& from, const Vec3& target) {
  Pose p;
  p.position = from;
  const Vec3 d = (target - from).normalized();
  p.pitch = std::asin(std::clamp(d.z(), -1.0, 1.0));
  p.yaw = std::atan2(d.y(), d.x());
  return p;
}

Vec3 orthonormal_tangent(const Vec3& n) {
  int best = 0;
  for (int a = 1; a < 3; ++a)
    if (std::abs(n[a]) < std::abs(n[best])) best = a;
  Vec3 e = Vec3::Zero();
  e[best] = 1.0;
  return (e - e.dot(n) * n).normalized();
}

}  // namespace

std::vector<CandidateViewpoint> sample_random(const Pose& current,
                                              const std::vector<Vec3>& lattice,
                                              int count, const PlannerConfig& cfg, Rng& rng) {
  if (lattice.empty()) throw std::runtime_error("sample_random: empty free lattice");
  if (count <= 0) return {};

  std::vector<int> in_range;
  for (int i = 0; i < static_cast<int>(lattice.size()); ++i)
    if ((lattice[i] - current.position).norm() <= cfg.random_range) in_range.push_back(i);

  if (in_range.empty()) {
    // fall back to the nearest lattice points
    std::vector<int> order(lattice.size());
    for (int i = 0; i < static_cast<int>(lattice.size()); ++i) order[i] = i;
    const int k = std::min<int>(16, static_cast<int>(lattice.size()));
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
      const double da = (lattice[a] - current.position).squaredNorm();
      const double db = (lattice[b] - current.position).squaredNorm();
      if (da != db) return da < db;
      return a < b;
    });
    in_range.assign(order.begin(), order.begin() + k);
  }

  std::vector<CandidateViewpoint> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    CandidateViewpoint c;
    c.pose.position = lattice[in_range[rng.uniform_index(in_range.size())]];
    c.pose.yaw = rng.uniform(0.0, 2.0 * kPi);
    c.pose.pitch = rng.uniform(-cfg.random_pitch_band, cfg.random_pitch_band);
    c.origin = CandidateOrigin::kRandom;
    out.push_back(c);
  }
  return out;
}

std::vector<CandidateViewpoint> sample_roi(const std::vector<RoiVoxel>& rois_sorted,
                                           const VoxelMap& voxel_map, const PlannerConfig& cfg,
                                           Rng& rng) {
  std::vector<CandidateViewpoint> out;
  std::unordered_set<size_t> taken_voxels;
  const double cos_max = std::cos(cfg.cone.max_angle);

  for (const RoiVoxel& roi : rois_sorted) {
    if (static_cast<int>(out.size()) >= cfg.n_roi_max) break;
    const Vec3 t1 = orthonormal_tangent(roi.normal);
    const Vec3 t2 = roi.normal.cross(t1);
    for (int s = 0; s < cfg.cone.samples_per_roi; ++s) {
      if (static_cast<int>(out.size()) >= cfg.n_roi_max) break;
      // uniform over the spherical cap around the normal
      const double cos_t = 1.0 - rng.uniform() * (1.0 - cos_max);
      const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
      const double phi = rng.uniform(0.0, 2.0 * kPi);
      const Vec3 dir = cos_t * roi.normal + sin_t * (std::cos(phi) * t1 + std::sin(phi) * t2);
      const double dist = rng.uniform(cfg.cone.d_min, cfg.cone.d_max);
      const Vec3 p = roi.center + dist * dir;
      if (!voxel_map.contains_point(p)) continue;
      const Vec3i idx = voxel_map.point_to_index(p);
      if (voxel_map.state(idx) != VoxelState::kFree) continue;
      if (!taken_voxels.insert(voxel_map.flat(idx)).second) continue;
      CandidateViewpoint c;
      const Vec3 snapped = voxel_map.index_to_center(idx);
      if ((roi.center - snapped).norm() < 1e-9) continue;
      c.pose = look_at(snapped, roi.center);
      c.origin = roi.kind == RoiKind::kFrontier ? CandidateOrigin::kRoiFrontier
                                                : CandidateOrigin::kRoiLowConfidence;
      out.push_back(c);
    }
  }
  return out;
}

double utility(const CandidateViewpoint& candidate, const VoxelMap& voxel_map,
               const SplatMap& splat_map, const CameraIntrinsics& intr,
               const PlannerConfig& cfg) {
  const RenderedViews views = splat_map.render(candidate.pose, intr, false);
  const int n_u = voxel_map.count_unexplored_visible(candidate.pose, views.depth, intr);
  const double u_v = static_cast<double>(n_u) / voxel_map.voxel_count();
  double u_g = 0.0;
  if (cfg.mode != PlannerMode::kFbe) {
    double mean_k = 0.0;
    for (size_t i = 0; i < views.confidence.size(); ++i) mean_k += views.confidence[i];
    mean_k /= static_cast<double>(views.confidence.size());
    u_g = -mean_k;
  }
  return cfg.phi * u_v + u_g;
}

std::optional<AstarResult> astar(const VoxelMap& map, const Vec3i& start, const Vec3i& goal) {
  if (map.state(start) != VoxelState::kFree || map.state(goal) != VoxelState::kFree)
    throw std::invalid_argument("astar: start or goal is not free");

  const double vs = map.voxel_size();
  auto heuristic = [&](const Vec3i& a) { return vs * (a - goal).cast<double>().norm(); };

  struct Node {
    double f;
    double g;
    size_t flat;
    Vec3i idx;
  };
  auto cmp = [](const Node& a, const Node& b) {
    if (a.f != b.f) return a.f > b.f;
    return a.flat > b.flat;  // deterministic tie-break
  };
  std::priority_queue<Node, std::vector<Node>, decltype(cmp)> open(cmp);
  std::unordered_map<size_t, double> best_g;
  std::unordered_map<size_t, size_t> parent;

  const size_t start_flat = map.flat(start);
  open.push({heuristic(start), 0.0, start_flat, start});
  best_g[start_flat] = 0.0;

  const Vec3i moves[6] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  const Vec3i dims = map.dims();
  auto unflat = [&](size_t f) {
    return Vec3i(static_cast<int>(f / (static_cast<size_t>(dims.y()) * dims.z())),
                 static_cast<int>((f / dims.z()) % dims.y()), static_cast<int>(f % dims.z()));
  };

  while (!open.empty()) {
    const Node cur = open.top();
    open.pop();
    if (cur.g > best_g[cur.flat] + 1e-12) continue;  // stale entry
    if (cur.idx == goal) {
      AstarResult res;
      res.length = cur.g;
      size_t f = cur.flat;
      std::vector<size_t> chain{f};
      while (f != start_flat) {
        f = parent.at(f);
        chain.push_back(f);
      }
      for (auto it = chain.rbegin(); it != chain.rend(); ++it) res.path.push_back(unflat(*it));
      return res;
    }
    for (const Vec3i& mv : moves) {
      const Vec3i nb = cur.idx + mv;
      if (!map.in_bounds(nb)) continue;
      if (map.state(nb) != VoxelState::kFree) continue;
      const double g2 = cur.g + vs;
      const size_t nb_flat = map.flat(nb);
      auto it = best_g.find(nb_flat);
      if (it == best_g.end() || g2 < it->second - 1e-12) {
        best_g[nb_flat] = g2;
        parent[nb_flat] = cur.flat;
        open.push({g2 + heuristic(nb), g2, nb_flat, nb});
      }
    }
  }
  return std::nullopt;
}

int select(const std::vector<CandidateViewpoint>& candidates, const PlannerConfig& cfg) {
  if (candidates.empty()) throw std::invalid_argument("select: no candidates");

  double min_u = std::numeric_limits<double>::infinity();
  for (const auto& c : candidates) min_u = std::min(min_u, c.utility);
  const double shift = std::min(0.0, min_u);

  double sum_u = 0.0, sum_l = 0.0;
  for (const auto& c : candidates) {
    sum_u += c.utility - shift;
    sum_l += c.path_length;
  }

  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(candidates.size()); ++i) {
    const double u_term = sum_u > 0.0 ? (candidates[i].utility - shift) / sum_u : 0.0;
    const double l_term = sum_l > 0.0 ? cfg.delta * candidates[i].path_length / sum_l : 0.0;
    const double score = u_term - l_term;
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return best;
}

CandidateViewpoint plan(const Pose& current, const VoxelMap& voxel_map, const SplatMap& splat_map,
                        const std::vector<RoiVoxel>& low_conf_rois, const CameraIntrinsics& intr,
                        const PlannerConfig& cfg, Rng& rng, PlanDiagnostics* diag) {
  PlanDiagnostics local_diag;
  PlanDiagnostics& d = diag ? *diag : local_diag;
  d = PlanDiagnostics{};

  // gather ROIs per mode
  std::vector<RoiVoxel> rois;
  if (cfg.mode != PlannerMode::kNoRoi) {
    rois = voxel_map.frontiers();
    if (cfg.mode == PlannerMode::kFull || cfg.mode == PlannerMode::kCountOnlyConfidence)
      rois.insert(rois.end(), low_conf_rois.begin(), low_conf_rois.end());
    for (auto& r : rois) r.range_to_robot = (r.center - current.position).norm();
    std::stable_sort(rois.begin(), rois.end(), [](const RoiVoxel& a, const RoiVoxel& b) {
      return a.range_to_robot < b.range_to_robot;
    });
  }

  std::vector<CandidateViewpoint> candidates = sample_roi(rois, voxel_map, cfg, rng);
  const int n_random = cfg.n_total - static_cast<int>(candidates.size());
  const std::vector<Vec3> lattice = voxel_map.free_lattice();
  const auto randoms = sample_random(current, lattice, n_random, cfg, rng);
  candidates.insert(candidates.end(), randoms.begin(), randoms.end());

  // path start: the robot's voxel, snapped to the nearest free voxel if
  // the occupancy update closed it
  Vec3i start = voxel_map.point_to_index(current.position);
  if (voxel_map.state(start) != VoxelState::kFree) {
    double best_d = std::numeric_limits<double>::infinity();
    for (const Vec3& p : lattice) {
      const double dist = (p - current.position).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        start = voxel_map.point_to_index(p);
      }
    }
    if (best_d == std::numeric_limits<double>::infinity())
      throw std::runtime_error("plan: no free voxels");
  }

  // reachability filter with per-goal-voxel path cache
  std::unordered_map<size_t, std::optional<AstarResult>> path_cache;
  std::vector<CandidateViewpoint> reachable;
  for (auto& c : candidates) {
    const Vec3i goal = voxel_map.point_to_index(c.pose.position);
    const size_t key = voxel_map.flat(goal);
    auto it = path_cache.find(key);
    if (it == path_cache.end()) it = path_cache.emplace(key, astar(voxel_map, start, goal)).first;
    if (!it->second) {
      ++d.n_unreachable;
      continue;
    }
    c.path = it->second->path;
    c.path_length = it->second->length;
    reachable.push_back(std::move(c));
  }
  if (reachable.empty()) throw std::runtime_error("plan: no reachable candidates");

  // batch utility evaluation
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 4)
#endif
  for (int i = 0; i < static_cast<int>(reachable.size()); ++i)
    reachable[i].utility = utility(reachable[i], voxel_map, splat_map, intr, cfg);

  for (const auto& c : reachable) {
    switch (c.origin) {
      case CandidateOrigin::kRandom: ++d.n_random; break;
      case CandidateOrigin::kRoiFrontier: ++d.n_roi_frontier; break;
      case CandidateOrigin::kRoiLowConfidence: ++d.n_roi_low_conf; break;
    }
  }

  const int winner = select(reachable, cfg);

  // winning score decomposition for diagnostics
  double min_u = std::numeric_limits<double>::infinity();
  for (const auto& c : reachable) min_u = std::min(min_u, c.utility);
  const double shift = std::min(0.0, min_u);
  double sum_u = 0.0, sum_l = 0.0;
  for (const auto& c : reachable) {
    sum_u += c.utility - shift;
    sum_l += c.path_length;
  }
  d.winner_utility = reachable[winner].utility;
  d.winner_utility_term = sum_u > 0.0 ? (reachable[winner].utility - shift) / sum_u : 0.0;
  d.winner_cost_term = sum_l > 0.0 ? cfg.delta * reachable[winner].path_length / sum_l : 0.0;
  d.winner_score = d.winner_utility_term - d.winner_cost_term;
  d.winner_origin = reachable[winner].origin;

  return reachable[winner];
}

}  // namespace asr
