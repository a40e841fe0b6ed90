#include "asr/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace asr {

void ObservationLog::add_observation(size_t surfel, int pose_index) {
  auto& set = sets_[surfel];
  const auto it = std::lower_bound(set.begin(), set.end(), pose_index);
  if (it == set.end() || *it != pose_index) set.insert(it, pose_index);
}

void ObservationLog::apply_remap(const std::vector<int>& remap) {
  size_t n_new = 0;
  for (int r : remap)
    if (r >= 0) ++n_new;
  std::vector<std::vector<int>> next(n_new);
  for (size_t i = 0; i < remap.size(); ++i)
    if (remap[i] >= 0) next[remap[i]] = std::move(sets_[i]);
  sets_.swap(next);
}

void update_observations(ObservationLog& log, const SplatMap& map, int pose_index,
                         const Pose& pose, const CameraIntrinsics& intr, double w_min) {
  if (log.size() < map.size()) log.resize(map.size());
  for (int i : map.visible_surfels(pose, intr, w_min)) log.add_observation(i, pose_index);
}

double confidence(const Surfel& surfel, const std::vector<int>& observers,
                  const PoseHistory& history, double d_far) {
  if (observers.empty()) return 0.0;
  const Vec3 n = surfel.normal();
  double gamma = 0.0;
  Vec3 mean_dir = Vec3::Zero();
  int used = 0;
  for (int j : observers) {
    const Vec3 diff = history[j].position - surfel.x;
    const double d = diff.norm();
    if (d < 1e-9) continue;
    const Vec3 v = diff / d;
    gamma += std::max(0.0, 1.0 - d / d_far) * std::max(0.0, n.dot(v));
    mean_dir += v;
    ++used;
  }
  if (used == 0) return 0.0;
  mean_dir /= used;
  const double beta = 1.0 - mean_dir.norm();
  return gamma * std::exp(beta);
}

double confidence_count_only(const std::vector<int>& observers, int n_sat) {
  if (n_sat <= 0) return observers.empty() ? 0.0 : 1.0;
  return std::min(1.0, static_cast<double>(observers.size()) / n_sat);
}

void refresh_confidences(SplatMap& map, const ObservationLog& log, const PoseHistory& history,
                         double d_far, ConfidenceMode mode, int count_only_saturation) {
  static const std::vector<int> kEmpty;
  for (size_t i = 0; i < map.size(); ++i) {
    const std::vector<int>& obs = i < log.size() ? log.observers(i) : kEmpty;
    Surfel& g = map.surfels()[i];
    g.k = mode == ConfidenceMode::kFull ? confidence(g, obs, history, d_far)
                                        : confidence_count_only(obs, count_only_saturation);
  }
}

std::vector<RoiVoxel> low_confidence_rois(const SplatMap& map, const VoxelMap& voxel_map,
                                          double k_thresh) {
  struct Acc {
    Vec3 sum = Vec3::Zero();
    Vec3 first = Vec3::Zero();
    int count = 0;
  };
  std::map<size_t, Acc> per_voxel;  // ordered for deterministic output

  for (const Surfel& g : map.surfels()) {
    if (g.k >= k_thresh) continue;
    if (!voxel_map.contains_point(g.x)) continue;
    const Vec3i idx = voxel_map.point_to_index(g.x);
    if (voxel_map.state(idx) != VoxelState::kOccupied) continue;
    Acc& acc = per_voxel[voxel_map.flat(idx)];
    Vec3 n = g.normal();
    if (acc.count == 0) acc.first = n;
    else if (n.dot(acc.first) < 0.0) n = -n;  // hemisphere of the first normal
    acc.sum += n;
    ++acc.count;
  }

  std::vector<RoiVoxel> out;
  const Vec3i dims = voxel_map.dims();
  for (const auto& [flat, acc] : per_voxel) {
    const Vec3 mean = acc.sum / acc.count;
    if (mean.norm() < 0.1) continue;  // cancelling normals carry no direction
    const int z = static_cast<int>(flat % dims.z());
    const int y = static_cast<int>((flat / dims.z()) % dims.y());
    const int x = static_cast<int>(flat / (static_cast<size_t>(dims.z()) * dims.y()));
    out.push_back({voxel_map.index_to_center(Vec3i(x, y, z)), mean.normalized(),
                   RoiKind::kLowConfidence, 0.0});
  }
  return out;
}

}  // namespace asr
