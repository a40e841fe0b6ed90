#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>

namespace asr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec2i = Eigen::Vector2i;
using Vec3i = Eigen::Vector3i;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

// 5-DoF sensor pose: 3D position plus yaw/pitch, roll fixed to zero.
struct Pose {
  Vec3 position{0.0, 0.0, 0.0};
  double yaw = 0.0;    // about world +z
  double pitch = 0.0;  // elevation, positive looks up, in [-pi/2, pi/2]
};

struct CameraIntrinsics {
  Vec2 fov_deg{60.0, 60.0};  // horizontal, vertical
  int width = 64;
  int height = 64;
  double d_near = 0.1;
  double d_far = 5.0;

  double fx() const { return 0.5 * width / std::tan(0.5 * deg2rad(fov_deg.x())); }
  double fy() const { return 0.5 * height / std::tan(0.5 * deg2rad(fov_deg.y())); }
  double cx() const { return 0.5 * width; }
  double cy() const { return 0.5 * height; }
};

// World-to-camera transform. Camera axes: x right, y down, z forward.
struct CameraFrame {
  Mat3 R_wc = Mat3::Identity();  // rows: right, down, forward
  Vec3 origin{0.0, 0.0, 0.0};

  static CameraFrame from_pose(const Pose& p) {
    const double cy = std::cos(p.yaw), sy = std::sin(p.yaw);
    const double cp = std::cos(p.pitch), sp = std::sin(p.pitch);
    const Vec3 fwd(cp * cy, cp * sy, sp);
    const Vec3 right(sy, -cy, 0.0);  // horizontal since roll = 0
    const Vec3 down = fwd.cross(right);
    CameraFrame f;
    f.R_wc.row(0) = right;
    f.R_wc.row(1) = down;
    f.R_wc.row(2) = fwd;
    f.origin = p.position;
    return f;
  }

  Vec3 to_camera(const Vec3& p_world) const { return R_wc * (p_world - origin); }
  Vec3 to_world(const Vec3& p_cam) const { return R_wc.transpose() * p_cam + origin; }
  Vec3 forward() const { return R_wc.row(2).transpose(); }
};

// Unit world-space ray through the centre of pixel (px, py).
inline Vec3 pixel_ray_world(const CameraFrame& cam, const CameraIntrinsics& intr, double px,
                            double py) {
  const Vec3 dir_cam((px - intr.cx()) / intr.fx(), (py - intr.cy()) / intr.fy(), 1.0);
  return (cam.R_wc.transpose() * dir_cam).normalized();
}

inline Vec3 pixel_ray_cam(const CameraIntrinsics& intr, double px, double py) {
  return Vec3((px - intr.cx()) / intr.fx(), (py - intr.cy()) / intr.fy(), 1.0).normalized();
}

// Projects a camera-frame point; returns false when behind the camera.
inline bool project_point(const CameraIntrinsics& intr, const Vec3& p_cam, Vec2* uv) {
  if (p_cam.z() <= 0.0) return false;
  uv->x() = intr.fx() * p_cam.x() / p_cam.z() + intr.cx();
  uv->y() = intr.fy() * p_cam.y() / p_cam.z() + intr.cy();
  return true;
}

struct Aabb {
  Vec3 min{0.0, 0.0, 0.0};
  Vec3 max{0.0, 0.0, 0.0};

  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

}  // namespace asr
