#pragma once

#include <optional>
#include <unordered_set>
#include <vector>

#include "asr/core.hpp"
#include "asr/image.hpp"
#include "asr/scene_sim.hpp"

namespace asr {

// One 2D Gaussian primitive. The covariance R * diag(sx^2, sy^2, 0) * R^T
// is rank-2; the surfel normal is the third column of R.
struct Surfel {
  Vec3 x{0.0, 0.0, 0.0};       // center, meters
  Quat q{1.0, 0.0, 0.0, 0.0};  // unit rotation
  Vec2 s{0.01, 0.01};          // scales along the two tangent axes, > 0
  Vec3 c{0.5, 0.5, 0.5};       // rgb in [0,1]^3
  double o = 0.5;              // opacity in [0,1]
  double k = 0.0;              // confidence, >= 0, non-trainable

  Mat3 rotation() const { return q.normalized().toRotationMatrix(); }
  Vec3 normal() const { return rotation().col(2); }
};

// Sigma = R diag(sx^2, sy^2, 0) R^T. Throws when |q| strays beyond 1e-6
// of unit length.
Mat3 surfel_covariance(const Surfel& g);

struct SplatRenderParams {
  double blur_px2 = 0.3;              // screen-space low-pass added to Sigma'
  double mahalanobis_cutoff2 = 9.0;   // 3 sigma footprint truncation
  double transmittance_cutoff = 1e-4; // early compositing stop
  double opacity_valid_min = 1e-3;    // below this, rendered depth is invalid
  double min_center_z_factor = 0.5;   // skip surfels with z <= factor * d_near
};

struct PixelContribution {
  int surfel = 0;
  double weight = 0.0;  // w_i = T_i * alpha_i
};

// Per-pixel channel maps of one rasterization pass. D, N, K are
// opacity-weighted sums (not normalized by O); D holds the ray/surfel
// intersection range and is the invalid sentinel where O < 1e-3.
struct RenderedViews {
  ImageV3 color;       // I
  ImageD depth;        // D
  ImageV3 normal;      // N, camera frame, flipped toward the camera
  ImageD opacity;      // O
  ImageD confidence;   // K
  std::vector<std::vector<PixelContribution>> contributors;  // optional, row-major

  bool has_contributors() const { return !contributors.empty(); }
};

struct Projection {
  Vec2 center_px;   // u_i
  Mat2 cov_px;      // Sigma'_i (blur included)
  double center_z;  // camera-frame z, used as the global sort key
};

// EWA projection of one surfel: u_i and Sigma'_i = J W Sigma W^T J^T + blur I.
// Returns nullopt when the center is behind the near-plane guard.
std::optional<Projection> project_surfel(const Surfel& g, const CameraFrame& cam,
                                         const CameraIntrinsics& intr,
                                         const SplatRenderParams& params = {});

struct DensifyThresholds {
  double opacity_min = 0.5;
  double color_error_max = 0.5;
  double depth_lambda = 0.05;
};

using DensifyMask = Image<uint8_t>;

struct SpawnParams {
  int stride = 2;           // image-space subsampling in both axes
  int max_per_frame = 4096;
  Vec2 scale{0.01, 0.01};
  double opacity = 0.5;
};

class SplatMap {
 public:
  std::vector<Surfel>& surfels() { return surfels_; }
  const std::vector<Surfel>& surfels() const { return surfels_; }
  const std::vector<int>& creation_steps() const { return creation_steps_; }
  size_t size() const { return surfels_.size(); }
  bool empty() const { return surfels_.empty(); }

  void add(const Surfel& g, int creation_step = 0);

  // Forward rasterization of Eq-style alpha compositing: surfels sorted
  // front-to-back by camera-frame center depth, per-pixel Gaussian
  // weights truncated at 3 sigma, early stop at low transmittance.
  RenderedViews render(const Pose& pose, const CameraIntrinsics& intr, bool with_contributors,
                       const SplatRenderParams& params = {}) const;

  // Indices whose maximum per-pixel contribution over the view reaches
  // w_min (default 0.3).
  std::vector<int> visible_surfels(const Pose& pose, const CameraIntrinsics& intr,
                                   double w_min = 0.3,
                                   const SplatRenderParams& params = {}) const;

  // Removes surfels invisible from every history pose. Returns the number
  // removed and an old->new index remap (-1 for removed entries).
  std::pair<int, std::vector<int>> prune_invisible(const std::vector<Pose>& history,
                                                   const CameraIntrinsics& intr,
                                                   double w_min = 0.3,
                                                   const SplatRenderParams& params = {});

  // One record per surfel: x q s c o k.
  void save(std::ostream& os) const;
  static SplatMap load(std::istream& is);

 private:
  std::vector<Surfel> surfels_;
  std::vector<int> creation_steps_;
};

// Mask of pixels needing new surfels: low rendered opacity, high color
// error, or measured geometry in front of the rendered depth. Pixels with
// invalid measured depth skip the depth clause; invalid rendered depth
// fires through the opacity clause.
DensifyMask densify_mask(const RenderedViews& rendered, const RgbdFrame& frame,
                         const DensifyThresholds& thresholds = {});

// Spawns surfels at unprojected masked pixels (subsampled and capped).
// normals is the camera-frame normal map estimated from measured depth;
// pixels with zero normal or invalid depth are skipped. Returns the count
// added.
int spawn_surfels(SplatMap& map, const RgbdFrame& frame, const DensifyMask& mask,
                  const ImageV3& normals, const CameraIntrinsics& intr, int creation_step,
                  const SpawnParams& params = {});

// (w, x, y, z) quaternion to rotation matrix; input must be unit length.
Mat3 rotation_from_unit_quat(const Eigen::Vector4d& q);

namespace detail {

// Internal per-view structures shared between the forward rasterizer and
// the training backward pass.
struct SurfelViewInfo {
  bool in_view = false;
  Vec2 u;        // projected center (pixels)
  Mat2 cov;      // Sigma' with blur
  Mat2 cov_inv;
  Vec3 t_cam;    // camera-frame center
  Mat3 R;        // rotation from the normalized quaternion
  Vec3 n_world;  // unit surfel normal (R column 2)
  Vec3 n_view;   // camera-frame normal, flipped toward the camera
  double flip = 1.0;
  double center_z = 0.0;
};

// Range along `ray` to the surfel. The ray/plane intersection counts only
// while it lands within the 3-sigma extent of the primitive in its own
// plane; grazing or missing rays (a blur-halo artifact of screen-space
// splatting) fall back to the center range.
struct DepthSample {
  double depth = 0.0;
  bool plane_branch = false;  // false = center-range fallback
  double plane_m2 = 0.0;      // tangent-plane Mahalanobis^2 of the hit
};
DepthSample surfel_ray_depth(const Vec3& x, const Mat3& R, const Vec2& s,
                             const Vec3& cam_origin, const Vec3& ray);

struct ViewEntry {
  int surfel;    // original surfel index
  double alpha;
  double depth;  // ray/plane intersection range for this pixel
};

struct BinnedView {
  std::vector<std::vector<ViewEntry>> pixel_entries;  // row-major, front-to-back
  std::vector<SurfelViewInfo> info;                   // per original surfel
  std::vector<Vec3> pixel_rays;                       // unit world rays, row-major
};

BinnedView bin_surfels(const std::vector<Surfel>& surfels, const CameraFrame& cam,
                       const CameraIntrinsics& intr, const SplatRenderParams& params);

}  // namespace detail

}  // namespace asr
