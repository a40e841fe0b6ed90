#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "asr/core.hpp"
#include "asr/image.hpp"
#include "asr/rng.hpp"

namespace asr {

struct BoxPrimitive {
  Vec3 min;
  Vec3 max;
  Vec3 rgb;
};

struct TrianglePrimitive {
  Vec3 v0, v1, v2;
  Vec3 rgb;
};

using ScenePrimitive = std::variant<BoxPrimitive, TrianglePrimitive>;

// Synthetic ground-truth world: colored axis-aligned boxes and triangles
// inside an axis-aligned bounding volume.
struct GroundTruthScene {
  Aabb bounds;
  std::vector<ScenePrimitive> primitives;

  void validate() const;  // throws std::invalid_argument on bad geometry
};

struct RayHit {
  double distance = 0.0;
  Vec3 color{0.0, 0.0, 0.0};
  Vec3 normal{0.0, 0.0, 1.0};  // faces the ray origin
};

struct RgbdFrame {
  ImageV3 rgb;
  ImageD depth;  // Euclidean range along the pixel ray; 0 marks invalid
  Pose pose;
  int frame_index = 0;
};

constexpr double kInvalidDepth = 0.0;

// Nearest intersection of a ray with any scene primitive. The returned
// normal is flipped to face the ray origin. dir must be unit length.
std::optional<RayHit> ray_cast(const GroundTruthScene& scene, const Vec3& origin,
                               const Vec3& dir);

// Per-primitive intersection helpers, exposed for oracle-style tests.
std::optional<RayHit> intersect_box(const BoxPrimitive& box, const Vec3& origin, const Vec3& dir);
std::optional<RayHit> intersect_triangle(const TrianglePrimitive& tri, const Vec3& origin,
                                         const Vec3& dir);

// Simulated RGB-D capture: pinhole ray cast, depth perturbed with
// zero-mean Gaussian noise, sigma = noise_sigma_slope * depth. Depths
// outside [d_near, d_far] become the invalid sentinel. Rays that miss
// return black RGB.
RgbdFrame render_gt(const GroundTruthScene& scene, const Pose& pose,
                    const CameraIntrinsics& intr, double noise_sigma_slope, Rng& rng);

struct SurfaceSample {
  Vec3 point;
  Vec3 normal;
};

// Area-uniform samples over all primitive surfaces. Throws on empty scene.
std::vector<SurfaceSample> sample_surface_points(const GroundTruthScene& scene, int n, Rng& rng);

// forward declaration; defined in voxel_map.hpp
class VoxelMap;

struct TestViewpointConfig {
  double pitch_min = deg2rad(-30.0);
  double pitch_max = deg2rad(30.0);
  bool with_replacement = true;
};

// Poses uniform over ground-truth free space: position uniform within a
// uniformly chosen free voxel, yaw uniform in [0, 2pi), pitch uniform in
// the configured band. Throws when the map has no free voxels.
std::vector<Pose> sample_test_viewpoints(const GroundTruthScene& scene, const VoxelMap& voxel_map,
                                         int n, Rng& rng,
                                         const TestViewpointConfig& cfg = {});

// JSON scene file loader ({"bounds": ..., "primitives": [...]}) plus the
// built-in generator names ("builtin:room"). Throws on parse errors.
GroundTruthScene load_scene(const std::string& path_or_builtin);
GroundTruthScene builtin_room_scene();

}  // namespace asr
