#include "asr/splat_map.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "asr/parallel.hpp"
#include "asr/rng.hpp"

namespace asr {

Mat3 rotation_from_unit_quat(const Eigen::Vector4d& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

Mat3 surfel_covariance(const Surfel& g) {
  const double norm = g.q.norm();
  if (std::abs(norm - 1.0) > 1e-6)
    throw std::invalid_argument("surfel quaternion is not unit length");
  const Eigen::Vector4d qv(g.q.w() / norm, g.q.x() / norm, g.q.y() / norm, g.q.z() / norm);
  const Mat3 R = rotation_from_unit_quat(qv);
  const Vec3 diag(g.s.x() * g.s.x(), g.s.y() * g.s.y(), 0.0);
  return R * diag.asDiagonal() * R.transpose();
}

std::optional<Projection> project_surfel(const Surfel& g, const CameraFrame& cam,
                                         const CameraIntrinsics& intr,
                                         const SplatRenderParams& params) {
  const Vec3 t = cam.to_camera(g.x);
  if (t.z() <= params.min_center_z_factor * intr.d_near) return std::nullopt;

  Projection proj;
  proj.center_z = t.z();
  proj.center_px = Vec2(intr.fx() * t.x() / t.z() + intr.cx(),
                        intr.fy() * t.y() / t.z() + intr.cy());

  Eigen::Matrix<double, 2, 3> J;
  const double inv_z = 1.0 / t.z();
  J << intr.fx() * inv_z, 0.0, -intr.fx() * t.x() * inv_z * inv_z,
      0.0, intr.fy() * inv_z, -intr.fy() * t.y() * inv_z * inv_z;

  const double qn = g.q.norm();
  const Eigen::Vector4d qv(g.q.w() / qn, g.q.x() / qn, g.q.y() / qn, g.q.z() / qn);
  const Mat3 R = rotation_from_unit_quat(qv);
  const Vec3 diag(g.s.x() * g.s.x(), g.s.y() * g.s.y(), 0.0);
  const Mat3 sigma = R * diag.asDiagonal() * R.transpose();

  proj.cov_px = J * cam.R_wc * sigma * cam.R_wc.transpose() * J.transpose();
  proj.cov_px(0, 0) += params.blur_px2;
  proj.cov_px(1, 1) += params.blur_px2;
  return proj;
}

namespace detail {

DepthSample surfel_ray_depth(const Vec3& x, const Mat3& R, const Vec2& s,
                             const Vec3& cam_origin, const Vec3& ray) {
  DepthSample out;
  const Vec3 to_center = x - cam_origin;
  const Vec3 n = R.col(2);
  const double denom = n.dot(ray);
  if (std::abs(denom) >= 1e-6) {
    const double d = n.dot(to_center) / denom;
    if (d > 0.0) {
      const Vec3 local = cam_origin + d * ray - x;
      const double u = local.dot(R.col(0)) / s.x();
      const double v = local.dot(R.col(1)) / s.y();
      out.plane_m2 = u * u + v * v;
      if (out.plane_m2 <= 9.0) {
        out.depth = d;
        out.plane_branch = true;
        return out;
      }
    }
  }
  out.depth = to_center.norm();
  return out;
}

BinnedView bin_surfels(const std::vector<Surfel>& surfels, const CameraFrame& cam,
                       const CameraIntrinsics& intr, const SplatRenderParams& params) {
  BinnedView bins;
  const size_t n_px = static_cast<size_t>(intr.width) * intr.height;
  bins.pixel_entries.resize(n_px);
  bins.info.resize(surfels.size());

  bins.pixel_rays.resize(n_px);
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x)
      bins.pixel_rays[static_cast<size_t>(y) * intr.width + x] =
          pixel_ray_world(cam, intr, x + 0.5, y + 0.5);

  std::vector<int> order;
  order.reserve(surfels.size());
  for (int i = 0; i < static_cast<int>(surfels.size()); ++i) {
    const Surfel& g = surfels[i];
    auto proj = project_surfel(g, cam, intr, params);
    if (!proj) continue;
    SurfelViewInfo& info = bins.info[i];
    info.in_view = true;
    info.u = proj->center_px;
    info.cov = proj->cov_px;
    const double det = info.cov(0, 0) * info.cov(1, 1) - info.cov(0, 1) * info.cov(1, 0);
    info.cov_inv << info.cov(1, 1), -info.cov(0, 1), -info.cov(1, 0), info.cov(0, 0);
    info.cov_inv /= det;
    info.t_cam = cam.to_camera(g.x);
    info.center_z = proj->center_z;
    const double qn = g.q.norm();
    info.R = rotation_from_unit_quat(
        Eigen::Vector4d(g.q.w() / qn, g.q.x() / qn, g.q.y() / qn, g.q.z() / qn));
    info.n_world = info.R.col(2);
    Vec3 n_view = cam.R_wc * info.n_world;
    info.flip = n_view.dot(info.t_cam) > 0.0 ? -1.0 : 1.0;
    info.n_view = info.flip * n_view;
    order.push_back(i);
  }

  // global front-to-back order by camera-frame center depth
  std::sort(order.begin(), order.end(), [&bins](int a, int b) {
    if (bins.info[a].center_z != bins.info[b].center_z)
      return bins.info[a].center_z < bins.info[b].center_z;
    return a < b;
  });

  for (const int i : order) {
    const Surfel& g = surfels[i];
    const SurfelViewInfo& info = bins.info[i];
    const double rx = 3.0 * std::sqrt(info.cov(0, 0));
    const double ry = 3.0 * std::sqrt(info.cov(1, 1));
    const int x0 = std::max(0, static_cast<int>(std::ceil(info.u.x() - rx - 0.5)));
    const int x1 = std::min(intr.width - 1, static_cast<int>(std::floor(info.u.x() + rx - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(info.u.y() - ry - 0.5)));
    const int y1 = std::min(intr.height - 1, static_cast<int>(std::floor(info.u.y() + ry - 0.5)));

    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Vec2 d(x + 0.5 - info.u.x(), y + 0.5 - info.u.y());
        const double m2 = info.cov_inv(0, 0) * d.x() * d.x() +
                          2.0 * info.cov_inv(0, 1) * d.x() * d.y() +
                          info.cov_inv(1, 1) * d.y() * d.y();
        if (m2 > params.mahalanobis_cutoff2) continue;
        const double alpha = g.o * std::exp(-0.5 * m2);
        if (alpha <= 0.0) continue;

        const size_t px = static_cast<size_t>(y) * intr.width + x;
        const double depth =
            surfel_ray_depth(g.x, info.R, g.s, cam.origin, bins.pixel_rays[px]).depth;
        bins.pixel_entries[px].push_back({i, alpha, depth});
      }
  }
  return bins;
}

}  // namespace detail

void SplatMap::add(const Surfel& g, int creation_step) {
  surfels_.push_back(g);
  creation_steps_.push_back(creation_step);
}

RenderedViews SplatMap::render(const Pose& pose, const CameraIntrinsics& intr,
                               bool with_contributors, const SplatRenderParams& params) const {
  const CameraFrame cam = CameraFrame::from_pose(pose);
  RenderedViews out;
  out.color = ImageV3(intr.height, intr.width, Vec3::Zero());
  out.depth = ImageD(intr.height, intr.width, kInvalidDepth);
  out.normal = ImageV3(intr.height, intr.width, Vec3::Zero());
  out.opacity = ImageD(intr.height, intr.width, 0.0);
  out.confidence = ImageD(intr.height, intr.width, 0.0);
  if (with_contributors)
    out.contributors.resize(static_cast<size_t>(intr.width) * intr.height);
  if (surfels_.empty()) return out;

  const detail::BinnedView bins = detail::bin_surfels(surfels_, cam, intr, params);

  parallel_blocks(intr.height, [&](int, int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < intr.width; ++x) {
        const size_t px = static_cast<size_t>(y) * intr.width + x;
        double T = 1.0;
        Vec3 color = Vec3::Zero(), normal = Vec3::Zero();
        double depth = 0.0, opacity = 0.0, conf = 0.0;
        for (const auto& e : bins.pixel_entries[px]) {
          if (T < params.transmittance_cutoff) break;
          const double w = T * e.alpha;
          const Surfel& g = surfels_[e.surfel];
          color += w * g.c;
          depth += w * e.depth;
          normal += w * bins.info[e.surfel].n_view;
          conf += w * g.k;
          opacity += w;
          if (with_contributors) out.contributors[px].push_back({e.surfel, w});
          T *= (1.0 - e.alpha);
        }
        out.color[px] = color;
        out.normal[px] = normal;
        out.opacity[px] = opacity;
        out.confidence[px] = conf;
        out.depth[px] = opacity < params.opacity_valid_min ? kInvalidDepth : depth;
      }
  });
  return out;
}

std::vector<int> SplatMap::visible_surfels(const Pose& pose, const CameraIntrinsics& intr,
                                           double w_min, const SplatRenderParams& params) const {
  std::vector<double> max_w(surfels_.size(), 0.0);
  if (!surfels_.empty()) {
    const CameraFrame cam = CameraFrame::from_pose(pose);
    const detail::BinnedView bins = detail::bin_surfels(surfels_, cam, intr, params);
    for (const auto& entries : bins.pixel_entries) {
      double T = 1.0;
      for (const auto& e : entries) {
        if (T < params.transmittance_cutoff) break;
        const double w = T * e.alpha;
        if (w > max_w[e.surfel]) max_w[e.surfel] = w;
        T *= (1.0 - e.alpha);
      }
    }
  }
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(surfels_.size()); ++i)
    if (max_w[i] >= w_min) out.push_back(i);
  return out;
}

std::pair<int, std::vector<int>> SplatMap::prune_invisible(const std::vector<Pose>& history,
                                                           const CameraIntrinsics& intr,
                                                           double w_min,
                                                           const SplatRenderParams& params) {
  std::vector<uint8_t> keep(surfels_.size(), 0);
  for (const Pose& pose : history)
    for (int i : visible_surfels(pose, intr, w_min, params)) keep[i] = 1;

  std::vector<int> remap(surfels_.size(), -1);
  size_t next = 0;
  for (size_t i = 0; i < surfels_.size(); ++i) {
    if (!keep[i]) continue;
    remap[i] = static_cast<int>(next);
    if (next != i) {
      surfels_[next] = surfels_[i];
      creation_steps_[next] = creation_steps_[i];
    }
    ++next;
  }
  const int removed = static_cast<int>(surfels_.size() - next);
  surfels_.resize(next);
  creation_steps_.resize(next);
  return {removed, remap};
}

void SplatMap::save(std::ostream& os) const {
  os.precision(17);
  for (const Surfel& g : surfels_) {
    os << g.x.x() << " " << g.x.y() << " " << g.x.z() << " " << g.q.w() << " " << g.q.x() << " "
       << g.q.y() << " " << g.q.z() << " " << g.s.x() << " " << g.s.y() << " " << g.c.x() << " "
       << g.c.y() << " " << g.c.z() << " " << g.o << " " << g.k << "\n";
  }
}

SplatMap SplatMap::load(std::istream& is) {
  SplatMap map;
  Surfel g;
  double qw, qx, qy, qz;
  while (is >> g.x.x() >> g.x.y() >> g.x.z() >> qw >> qx >> qy >> qz >> g.s.x() >> g.s.y() >>
         g.c.x() >> g.c.y() >> g.c.z() >> g.o >> g.k) {
    g.q = Quat(qw, qx, qy, qz);
    map.add(g);
  }
  return map;
}

DensifyMask densify_mask(const RenderedViews& rendered, const RgbdFrame& frame,
                         const DensifyThresholds& thresholds) {
  const int h = frame.rgb.height(), w = frame.rgb.width();
  if (rendered.opacity.height() != h || rendered.opacity.width() != w)
    throw std::invalid_argument("densify_mask: shape mismatch");
  DensifyMask mask(h, w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool fire = rendered.opacity.at(y, x) < thresholds.opacity_min;
      if (!fire) {
        const Vec3 diff = (rendered.color.at(y, x) - frame.rgb.at(y, x)).cwiseAbs();
        fire = diff.mean() > thresholds.color_error_max;
      }
      if (!fire) {
        const double d_meas = frame.depth.at(y, x);
        const double d_rend = rendered.depth.at(y, x);
        if (d_meas != kInvalidDepth && d_rend != kInvalidDepth)
          fire = d_rend - d_meas > thresholds.depth_lambda * d_meas;
      }
      mask.at(y, x) = fire ? 1 : 0;
    }
  return mask;
}

int spawn_surfels(SplatMap& map, const RgbdFrame& frame, const DensifyMask& mask,
                  const ImageV3& normals, const CameraIntrinsics& intr, int creation_step,
                  const SpawnParams& params) {
  const CameraFrame cam = CameraFrame::from_pose(frame.pose);
  const int h = mask.height(), w = mask.width();
  int added = 0;
  for (int cy = 0; cy < h && added < params.max_per_frame; cy += params.stride)
    for (int cx = 0; cx < w && added < params.max_per_frame; cx += params.stride) {
      // deterministic jitter inside each stride cell
      const uint64_t hsh = hash_combine(
          hash_combine(static_cast<uint64_t>(frame.frame_index), static_cast<uint64_t>(cy)),
          static_cast<uint64_t>(cx));
      const int y = std::min(cy + static_cast<int>(hsh % params.stride), h - 1);
      const int x = std::min(cx + static_cast<int>((hsh >> 8) % params.stride), w - 1);
      if (!mask.at(y, x)) continue;
      const double depth = frame.depth.at(y, x);
      if (depth == kInvalidDepth) continue;
      const Vec3 n_cam = normals.at(y, x);
      if (n_cam.squaredNorm() < 1e-12) continue;

      Surfel g;
      g.x = cam.origin + depth * pixel_ray_world(cam, intr, x + 0.5, y + 0.5);
      const Vec3 n = (cam.R_wc.transpose() * n_cam).normalized();
      // in-plane axis aligned with the world axis most orthogonal to n
      int best_axis = 0;
      for (int a = 1; a < 3; ++a)
        if (std::abs(n[a]) < std::abs(n[best_axis])) best_axis = a;
      Vec3 e = Vec3::Zero();
      e[best_axis] = 1.0;
      const Vec3 t1 = (e - e.dot(n) * n).normalized();
      const Vec3 t2 = n.cross(t1);
      Mat3 R;
      R.col(0) = t1;
      R.col(1) = t2;
      R.col(2) = n;
      g.q = Quat(R).normalized();
      g.s = params.scale;
      g.c = frame.rgb.at(y, x);
      g.o = params.opacity;
      g.k = 0.0;
      map.add(g, creation_step);
      ++added;
    }
  return added;
}

}  // namespace asr
