#include "asr/voxel_map.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "asr/scene_sim.hpp"

namespace asr {

namespace {
const Vec3i kNeighbors6[6] = {
    {1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1},
};
}

VoxelMap::VoxelMap(const Aabb& bounds, const VoxelMapConfig& cfg) : origin_(bounds.min), cfg_(cfg) {
  if (cfg.voxel_size <= 0.0) throw std::invalid_argument("voxel_size must be positive");
  const Vec3 ext = bounds.extent();
  for (int a = 0; a < 3; ++a)
    dims_[a] = std::max(1, static_cast<int>(std::ceil(ext[a] / cfg.voxel_size - 1e-9)));
  log_odds_.assign(static_cast<size_t>(voxel_count()), 0.0);
  observed_.assign(static_cast<size_t>(voxel_count()), 0);
}

bool VoxelMap::contains_point(const Vec3& p) const {
  const Vec3 rel = p - origin_;
  for (int a = 0; a < 3; ++a)
    if (rel[a] < 0.0 || rel[a] > dims_[a] * cfg_.voxel_size) return false;
  return true;
}

Vec3i VoxelMap::point_to_index(const Vec3& p) const {
  Vec3i idx;
  for (int a = 0; a < 3; ++a) {
    int i = static_cast<int>(std::floor((p[a] - origin_[a]) / cfg_.voxel_size));
    idx[a] = std::clamp(i, 0, dims_[a] - 1);
  }
  return idx;
}

Vec3 VoxelMap::index_to_center(const Vec3i& idx) const {
  return origin_ + cfg_.voxel_size * (idx.cast<double>() + Vec3(0.5, 0.5, 0.5));
}

VoxelState VoxelMap::state(const Vec3i& idx) const {
  if (!in_bounds(idx)) throw std::out_of_range("voxel index out of range");
  const size_t f = flat(idx);
  if (!observed_[f]) return VoxelState::kUnknown;
  return log_odds_[f] < 0.0 ? VoxelState::kFree : VoxelState::kOccupied;
}

void VoxelMap::update_voxel(const Vec3i& idx, double delta) {
  const size_t f = flat(idx);
  log_odds_[f] = std::clamp(log_odds_[f] + delta, cfg_.log_odds_min, cfg_.log_odds_max);
  observed_[f] = 1;
}

void VoxelMap::apply_hit(const Vec3i& idx) { update_voxel(idx, cfg_.log_odds_hit); }
void VoxelMap::apply_miss(const Vec3i& idx) { update_voxel(idx, cfg_.log_odds_miss); }

void VoxelMap::integrate_point_cloud(const Vec3& sensor_origin,
                                     const std::vector<Vec3>& points) {
  if (!contains_point(sensor_origin))
    throw std::invalid_argument("sensor origin outside voxel map");

  const double vs = cfg_.voxel_size;
  for (const Vec3& point : points) {
    Vec3 dir = point - sensor_origin;
    const double range = dir.norm();
    const bool endpoint_inside = contains_point(point);

    if (range < 1e-12) {
      if (endpoint_inside) apply_hit(point_to_index(point));
      continue;
    }
    dir /= range;

    // clip traversal range to the map box
    double t_max_ray = range;
    if (!endpoint_inside) {
      double t_exit = range;
      for (int a = 0; a < 3; ++a) {
        if (std::abs(dir[a]) < 1e-15) continue;
        const double lo = origin_[a], hi = origin_[a] + dims_[a] * vs;
        const double t0 = (lo - sensor_origin[a]) / dir[a];
        const double t1 = (hi - sensor_origin[a]) / dir[a];
        t_exit = std::min(t_exit, std::max(t0, t1));
      }
      t_max_ray = std::max(0.0, std::min(range, t_exit));
    }

    // Amanatides-Woo traversal from origin toward the endpoint
    Vec3i idx = point_to_index(sensor_origin);
    const Vec3i end_idx = endpoint_inside ? point_to_index(point) : Vec3i(-1, -1, -1);
    Vec3i step;
    Vec3 t_next, t_delta;
    for (int a = 0; a < 3; ++a) {
      if (dir[a] > 1e-15) {
        step[a] = 1;
        t_next[a] = (origin_[a] + (idx[a] + 1) * vs - sensor_origin[a]) / dir[a];
        t_delta[a] = vs / dir[a];
      } else if (dir[a] < -1e-15) {
        step[a] = -1;
        t_next[a] = (origin_[a] + idx[a] * vs - sensor_origin[a]) / dir[a];
        t_delta[a] = -vs / dir[a];
      } else {
        step[a] = 0;
        t_next[a] = std::numeric_limits<double>::infinity();
        t_delta[a] = std::numeric_limits<double>::infinity();
      }
    }

    const int max_steps = dims_.sum() + 3;
    bool hit_applied = false;
    for (int guard = 0; guard < max_steps; ++guard) {
      if (endpoint_inside && idx == end_idx) {
        apply_hit(idx);
        hit_applied = true;
        break;
      }
      int axis = 0;
      if (t_next[1] < t_next[axis]) axis = 1;
      if (t_next[2] < t_next[axis]) axis = 2;
      if (t_next[axis] >= t_max_ray) {
        // ray ends inside this voxel (clipped, or endpoint on a boundary)
        apply_miss(idx);
        break;
      }
      apply_miss(idx);
      t_next[axis] += t_delta[axis];
      idx[axis] += step[axis];
      if (!in_bounds(idx)) break;
    }
    if (endpoint_inside && !hit_applied) apply_hit(end_idx);
  }
}

std::vector<Vec3i> VoxelMap::frontier_indices() const {
  std::vector<Vec3i> out;
  Vec3i idx;
  for (idx.x() = 0; idx.x() < dims_.x(); ++idx.x())
    for (idx.y() = 0; idx.y() < dims_.y(); ++idx.y())
      for (idx.z() = 0; idx.z() < dims_.z(); ++idx.z()) {
        if (state(idx) != VoxelState::kFree) continue;
        for (const Vec3i& d : kNeighbors6) {
          const Vec3i nb = idx + d;
          if (in_bounds(nb) && state(nb) == VoxelState::kUnknown) {
            out.push_back(idx);
            break;
          }
        }
      }
  return out;
}

std::vector<RoiVoxel> VoxelMap::frontiers() const {
  std::vector<RoiVoxel> out;
  for (const Vec3i& idx : frontier_indices()) {
    Vec3 free_sum = Vec3::Zero();
    Vec3 unknown_sum = Vec3::Zero();
    for (const Vec3i& d : kNeighbors6) {
      const Vec3i nb = idx + d;
      if (!in_bounds(nb)) continue;
      const VoxelState s = state(nb);
      if (s == VoxelState::kFree) free_sum += d.cast<double>();
      else if (s == VoxelState::kUnknown) unknown_sum += d.cast<double>();
    }
    Vec3 normal;
    if (free_sum.norm() > 1e-9) normal = free_sum.normalized();
    else if (unknown_sum.norm() > 1e-9) normal = -unknown_sum.normalized();
    else normal = Vec3(1.0, 0.0, 0.0);
    out.push_back({index_to_center(idx), normal, RoiKind::kFrontier, 0.0});
  }
  return out;
}

std::vector<Vec3> VoxelMap::free_lattice() const {
  std::vector<Vec3> out;
  Vec3i idx;
  for (idx.x() = 0; idx.x() < dims_.x(); ++idx.x())
    for (idx.y() = 0; idx.y() < dims_.y(); ++idx.y())
      for (idx.z() = 0; idx.z() < dims_.z(); ++idx.z())
        if (state(idx) == VoxelState::kFree) out.push_back(index_to_center(idx));
  return out;
}

int VoxelMap::count_unexplored_visible(const Pose& pose, const ImageD& rendered_depth,
                                       const CameraIntrinsics& intr) const {
  const CameraFrame cam = CameraFrame::from_pose(pose);

  // frustum AABB: camera origin plus far-plane corners
  Vec3 lo = cam.origin, hi = cam.origin;
  for (const double px : {0.0, static_cast<double>(intr.width)})
    for (const double py : {0.0, static_cast<double>(intr.height)}) {
      const Vec3 corner = cam.origin + intr.d_far * pixel_ray_world(cam, intr, px, py);
      lo = lo.cwiseMin(corner);
      hi = hi.cwiseMax(corner);
    }
  Vec3i lo_idx = point_to_index(lo);
  Vec3i hi_idx = point_to_index(hi);

  int count = 0;
  Vec3i idx;
  for (idx.x() = lo_idx.x(); idx.x() <= hi_idx.x(); ++idx.x())
    for (idx.y() = lo_idx.y(); idx.y() <= hi_idx.y(); ++idx.y())
      for (idx.z() = lo_idx.z(); idx.z() <= hi_idx.z(); ++idx.z()) {
        if (observed_[flat(idx)]) continue;
        const Vec3 p_cam = cam.to_camera(index_to_center(idx));
        Vec2 uv;
        if (!project_point(intr, p_cam, &uv)) continue;
        if (uv.x() < 0.0 || uv.x() >= intr.width || uv.y() < 0.0 || uv.y() >= intr.height)
          continue;
        const double range = p_cam.norm();
        if (range < intr.d_near || range > intr.d_far) continue;
        const double d = rendered_depth.at(static_cast<int>(uv.y()), static_cast<int>(uv.x()));
        if (d != kInvalidDepth && range >= d) continue;
        ++count;
      }
  return count;
}

void VoxelMap::dump(std::ostream& os) const {
  Vec3i idx;
  for (idx.x() = 0; idx.x() < dims_.x(); ++idx.x())
    for (idx.y() = 0; idx.y() < dims_.y(); ++idx.y())
      for (idx.z() = 0; idx.z() < dims_.z(); ++idx.z()) {
        const size_t f = flat(idx);
        if (!observed_[f]) continue;
        const char* s = log_odds_[f] < 0.0 ? "free" : "occupied";
        os << idx.x() << " " << idx.y() << " " << idx.z() << " " << log_odds_[f] << " " << s
           << "\n";
      }
}

namespace {

bool box_overlaps_voxel(const BoxPrimitive& box, const Vec3& lo, const Vec3& hi) {
  return (box.min.array() <= hi.array()).all() && (box.max.array() >= lo.array()).all();
}

// separating-axis test for triangle vs axis-aligned box
bool triangle_overlaps_voxel(const TrianglePrimitive& tri, const Vec3& lo, const Vec3& hi) {
  const Vec3 c = 0.5 * (lo + hi);
  const Vec3 h = 0.5 * (hi - lo);
  const Vec3 v0 = tri.v0 - c, v1 = tri.v1 - c, v2 = tri.v2 - c;
  const Vec3 e0 = v1 - v0, e1 = v2 - v1, e2 = v0 - v2;

  auto axis_test = [&](const Vec3& axis) {
    if (axis.squaredNorm() < 1e-18) return true;
    const double p0 = v0.dot(axis), p1 = v1.dot(axis), p2 = v2.dot(axis);
    const double r = h.x() * std::abs(axis.x()) + h.y() * std::abs(axis.y()) +
                     h.z() * std::abs(axis.z());
    const double mn = std::min({p0, p1, p2}), mx = std::max({p0, p1, p2});
    return !(mn > r || mx < -r);
  };

  for (int a = 0; a < 3; ++a) {
    const double mn = std::min({v0[a], v1[a], v2[a]});
    const double mx = std::max({v0[a], v1[a], v2[a]});
    if (mn > h[a] || mx < -h[a]) return false;
  }
  for (const Vec3& e : {e0, e1, e2})
    for (int a = 0; a < 3; ++a) {
      Vec3 axis = Vec3::Zero();
      axis[a] = 1.0;
      if (!axis_test(e.cross(axis))) return false;
    }
  return axis_test(e0.cross(e1));
}

}  // namespace

VoxelMap ground_truth_voxelization(const GroundTruthScene& scene, double voxel_size) {
  VoxelMapConfig cfg;
  cfg.voxel_size = voxel_size;
  VoxelMap map(scene.bounds, cfg);
  Vec3i idx;
  for (idx.x() = 0; idx.x() < map.dims().x(); ++idx.x())
    for (idx.y() = 0; idx.y() < map.dims().y(); ++idx.y())
      for (idx.z() = 0; idx.z() < map.dims().z(); ++idx.z()) {
        const Vec3 lo = map.origin() + voxel_size * idx.cast<double>();
        const Vec3 hi = lo + Vec3(voxel_size, voxel_size, voxel_size);
        bool solid = false;
        for (const auto& prim : scene.primitives) {
          if (const auto* box = std::get_if<BoxPrimitive>(&prim))
            solid = box_overlaps_voxel(*box, lo, hi);
          else
            solid = triangle_overlaps_voxel(std::get<TrianglePrimitive>(prim), lo, hi);
          if (solid) break;
        }
        if (solid) map.apply_hit(idx);
        else map.apply_miss(idx);
      }
  return map;
}

}  // namespace asr
