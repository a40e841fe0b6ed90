#include "asr/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "asr/parallel.hpp"

namespace asr {

double psnr(const ImageV3& rendered, const ImageV3& reference) {
  if (rendered.height() != reference.height() || rendered.width() != reference.width())
    throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0.0;
  for (size_t i = 0; i < rendered.size(); ++i) mse += (rendered[i] - reference[i]).squaredNorm();
  mse /= static_cast<double>(rendered.size()) * 3.0;
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

struct CellKey {
  int64_t x, y, z;
  bool operator==(const CellKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct CellKeyHash {
  size_t operator()(const CellKey& k) const {
    size_t h = std::hash<int64_t>()(k.x);
    h = h * 1000003 ^ std::hash<int64_t>()(k.y);
    h = h * 1000003 ^ std::hash<int64_t>()(k.z);
    return h;
  }
};

CellKey cell_of(const Vec3& p, double cell) {
  return {static_cast<int64_t>(std::floor(p.x() / cell)),
          static_cast<int64_t>(std::floor(p.y() / cell)),
          static_cast<int64_t>(std::floor(p.z() / cell))};
}

}  // namespace

double completeness_ratio(const SplatMap& map, const std::vector<Pose>& training_poses,
                          const CameraIntrinsics& intr, const std::vector<Vec3>& gt_surface,
                          double threshold, int pixel_stride) {
  if (gt_surface.empty()) throw std::invalid_argument("completeness_ratio: empty surface");

  // fuse rendered depth into a world point cloud
  std::vector<Vec3> fused;
  for (const Pose& pose : training_poses) {
    const RenderedViews views = map.render(pose, intr, false);
    const CameraFrame cam = CameraFrame::from_pose(pose);
    for (int y = 0; y < intr.height; y += pixel_stride)
      for (int x = 0; x < intr.width; x += pixel_stride) {
        const double d = views.depth.at(y, x);
        if (d == kInvalidDepth) continue;
        fused.push_back(cam.origin + d * pixel_ray_world(cam, intr, x + 0.5, y + 0.5));
      }
  }
  if (fused.empty()) return 0.0;

  // spatial hash with cell = threshold; a radius search only needs the
  // 3x3x3 neighbourhood
  std::unordered_map<CellKey, std::vector<int>, CellKeyHash> grid;
  for (int i = 0; i < static_cast<int>(fused.size()); ++i)
    grid[cell_of(fused[i], threshold)].push_back(i);

  const double thresh2 = threshold * threshold;
  int covered = 0;
  for (const Vec3& p : gt_surface) {
    const CellKey base = cell_of(p, threshold);
    bool found = false;
    for (int64_t dx = -1; dx <= 1 && !found; ++dx)
      for (int64_t dy = -1; dy <= 1 && !found; ++dy)
        for (int64_t dz = -1; dz <= 1 && !found; ++dz) {
          const auto it = grid.find({base.x + dx, base.y + dy, base.z + dz});
          if (it == grid.end()) continue;
          for (int i : it->second)
            if ((fused[i] - p).squaredNorm() <= thresh2) {
              found = true;
              break;
            }
        }
    if (found) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(gt_surface.size());
}

MetricSample evaluate(const SplatMap& map, const std::vector<Pose>& training_poses,
                      const std::vector<Pose>& test_poses,
                      const std::vector<ImageV3>& gt_test_rgb, const CameraIntrinsics& intr,
                      const std::vector<Vec3>& gt_surface, double completeness_threshold) {
  MetricSample sample;
  if (!test_poses.empty()) {
    double sum = 0.0;
    std::vector<double> per_pose(test_poses.size(), 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 2)
#endif
    for (int i = 0; i < static_cast<int>(test_poses.size()); ++i) {
      const RenderedViews views = map.render(test_poses[i], intr, false);
      per_pose[i] = psnr(views.color, gt_test_rgb[i]);
    }
    for (double v : per_pose) sum += v;
    sample.psnr_mean = sum / test_poses.size();
  }
  sample.completeness = training_poses.empty()
                            ? 0.0
                            : completeness_ratio(map, training_poses, intr, gt_surface,
                                                 completeness_threshold);
  sample.surfel_count = static_cast<int>(map.size());
  return sample;
}

}  // namespace asr
