#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "asr/gradcheck.hpp"
#include "asr/scene_sim.hpp"
#include "asr/splat_train.hpp"
#include "test_support.hpp"

using namespace asr;

namespace {

// exact range image of the plane n . p = dist (camera frame), n facing the camera
ImageD plane_range_image(const CameraIntrinsics& intr, const Vec3& n, double dist) {
  ImageD depth(intr.height, intr.width, kInvalidDepth);
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x) {
      const Vec3 ray = Vec3((x + 0.5 - intr.cx()) / intr.fx(),
                            (y + 0.5 - intr.cy()) / intr.fy(), 1.0)
                           .normalized();
      const double denom = n.dot(ray);
      if (std::abs(denom) < 1e-9) continue;
      const double t = dist / denom;
      if (t > 0) depth.at(y, x) = t;
    }
  return depth;
}

// unfiltered central-difference normals, used as the no-filter baseline
Vec3 raw_normal_at(const ImageD& depth, const CameraIntrinsics& intr, int x, int y) {
  auto point = [&](int xx, int yy) {
    const Vec3 ray = Vec3((xx + 0.5 - intr.cx()) / intr.fx(),
                          (yy + 0.5 - intr.cy()) / intr.fy(), 1.0)
                         .normalized();
    return depth.at(yy, xx) * ray;
  };
  const Vec3 tx = 0.5 * (point(x + 1, y) - point(x - 1, y));
  const Vec3 ty = 0.5 * (point(x, y + 1) - point(x, y - 1));
  Vec3 f = tx.cross(ty);
  if (f.norm() < 1e-12) return Vec3::Zero();
  f.normalize();
  if (f.dot(point(x, y)) > 0) f = -f;
  return f;
}

}  // namespace

TEST_CASE("normal_from_depth: fronto-parallel plane gives (0,0,-1) in the interior") {
  // The bilateral filter mixes ranges across rays, so the reconstruction
  // is exact only up to the pixel angular resolution.
  CameraIntrinsics intr;
  intr.width = 48;
  intr.height = 48;
  intr.fov_deg = Vec2(40.0, 40.0);
  const ImageD depth = plane_range_image(intr, Vec3(0, 0, 1), 2.0);
  const ImageV3 normals = normal_from_depth(depth, intr);
  for (int y = 4; y < 44; ++y)
    for (int x = 4; x < 44; ++x)
      CHECK((normals.at(y, x) - Vec3(0, 0, -1)).norm() < 1e-3);
  // border pixels carry the zero normal
  CHECK(normals.at(0, 0).isZero(0.0));
}

TEST_CASE("normal_from_depth: 45-degree slanted plane matches the analytic normal") {
  CameraIntrinsics intr;
  intr.width = 64;
  intr.height = 64;
  intr.fov_deg = Vec2(30.0, 30.0);
  const Vec3 n = Vec3(1, 0, 1).normalized();
  const ImageD depth = plane_range_image(intr, n, 2.0);
  const ImageV3 normals = normal_from_depth(depth, intr);
  for (int y = 4; y < 60; ++y)
    for (int x = 4; x < 60; ++x)
      CHECK((normals.at(y, x) + n).norm() < 1e-3);  // flipped toward the camera
}

TEST_CASE("normal_from_depth: bilateral filtering beats raw differences under noise") {
  CameraIntrinsics intr;
  intr.width = 32;
  intr.height = 32;
  const Vec3 n(0, 0, 1);
  Rng rng(101);
  double err_filtered = 0.0, err_raw = 0.0;
  int count = 0;
  for (int trial = 0; trial < 20; ++trial) {
    ImageD depth = plane_range_image(intr, n, 2.0);
    for (size_t i = 0; i < depth.size(); ++i)
      if (depth[i] != kInvalidDepth) depth[i] += 0.01 * depth[i] * rng.normal();
    const ImageV3 filtered = normal_from_depth(depth, intr);
    for (int y = 4; y < 28; ++y)
      for (int x = 4; x < 28; ++x) {
        const Vec3 expect(0, 0, -1);
        if (!filtered.at(y, x).isZero(0.0)) {
          err_filtered += std::acos(std::clamp(filtered.at(y, x).dot(expect), -1.0, 1.0));
          const Vec3 raw = raw_normal_at(depth, intr, x, y);
          err_raw += std::acos(std::clamp(raw.dot(expect), -1.0, 1.0));
          ++count;
        }
      }
  }
  REQUIRE(count > 1000);
  CHECK(err_filtered / count < err_raw / count);
}

TEST_CASE("loss: exact zero for an empty map against a black frame") {
  CameraIntrinsics intr;
  intr.width = 8;
  intr.height = 8;
  SplatMap map;
  const auto views = map.render(Pose{}, intr, false);
  RgbdFrame frame;
  frame.rgb = ImageV3(8, 8, Vec3::Zero());
  frame.depth = ImageD(8, 8, kInvalidDepth);
  const LossParts parts = loss(views, frame, intr);
  CHECK(parts.total == 0.0);
  CHECK(parts.color == 0.0);
  CHECK(parts.depth == 0.0);
  CHECK(parts.normal == 0.0);
}

TEST_CASE("loss: constant color offset with color-only weights") {
  Rng rng(7);
  CameraIntrinsics intr;
  intr.width = 8;
  intr.height = 8;
  Pose pose;
  const CameraFrame cam = CameraFrame::from_pose(pose);
  SplatMap map;
  for (int i = 0; i < 4; ++i) map.add(random_facing_surfel(rng, cam));
  const auto views = map.render(pose, intr, false);
  RgbdFrame frame;
  frame.pose = pose;
  frame.rgb = views.color;
  for (size_t i = 0; i < frame.rgb.size(); ++i) frame.rgb[i] += Vec3(0.1, 0.1, 0.1);
  frame.depth = ImageD(8, 8, kInvalidDepth);
  LossWeights w;
  w.w_c = 1.0;
  w.w_d = 0.0;
  w.w_n = 0.0;
  const LossParts parts = loss(views, frame, intr, w);
  CHECK(parts.total == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("loss: parts match an independent scalar re-implementation") {
  Rng rng(11);
  CameraIntrinsics intr;
  intr.width = 8;
  intr.height = 8;
  Pose pose;
  const CameraFrame cam = CameraFrame::from_pose(pose);
  for (int trial = 0; trial < 10; ++trial) {
    SplatMap map, target;
    for (int i = 0; i < 5; ++i) map.add(random_facing_surfel(rng, cam));
    for (int i = 0; i < 5; ++i) target.add(random_facing_surfel(rng, cam));
    const auto views = map.render(pose, intr, false);
    const auto tviews = target.render(pose, intr, false);
    RgbdFrame frame;
    frame.pose = pose;
    frame.rgb = tviews.color;
    frame.depth = tviews.depth;
    const LossParts parts = loss(views, frame, intr);

    // independent recomputation
    const ImageV3 tilde = normal_from_depth(views.depth, intr);
    const int n_px = 64;
    double lc = 0.0;
    for (int i = 0; i < n_px; ++i)
      lc += ((views.color[i] - frame.rgb[i]).cwiseAbs().sum()) / 3.0;
    lc /= n_px;
    double ld = 0.0;
    int nd = 0;
    for (int i = 0; i < n_px; ++i)
      if (frame.depth[i] != kInvalidDepth && views.depth[i] != kInvalidDepth) {
        ld += std::abs(views.depth[i] - frame.depth[i]);
        ++nd;
      }
    if (nd) ld /= nd;
    double lcos = 0.0;
    int ncos = 0;
    for (int i = 0; i < n_px; ++i) {
      const double nu = views.normal[i].norm(), nv = tilde[i].norm();
      if (nu <= 1e-8 || nv <= 1e-8) continue;
      lcos += 1.0 - views.normal[i].dot(tilde[i]) / (nu * nv);
      ++ncos;
    }
    if (ncos) lcos /= ncos;
    double ltv = 0.0;
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 7; ++x)
        ltv += (views.normal.at(y, x) - views.normal.at(y, x + 1)).cwiseAbs().sum() +
               (views.normal.at(y, x) - views.normal.at(y + 1, x)).cwiseAbs().sum();
    ltv /= 49.0;

    CHECK(parts.color == doctest::Approx(lc).epsilon(1e-12));
    CHECK(parts.depth == doctest::Approx(ld).epsilon(1e-12));
    CHECK(parts.normal == doctest::Approx(lcos + ltv).epsilon(1e-12));
    CHECK(parts.total ==
          doctest::Approx(1.0 * lc + 0.8 * ld + 0.1 * (lcos + ltv)).epsilon(1e-12));
  }
}

TEST_CASE("gradients: color gradient is negative when the render is too dark") {
  CameraIntrinsics intr;
  intr.width = 16;
  intr.height = 16;
  Pose pose;
  const CameraFrame cam = CameraFrame::from_pose(pose);
  SplatMap map;
  Surfel g;
  const double z = 2.0;
  g.x = cam.to_world(Vec3(0, 0, z));
  Mat3 R;
  R.col(0) = cam.R_wc.row(0).transpose();
  R.col(1) = -cam.R_wc.row(1).transpose();
  R.col(2) = -cam.R_wc.row(2).transpose();
  g.q = Quat(R).normalized();
  g.s = Vec2(0.5, 0.5);
  g.c = Vec3(0.2, 0.3, 0.4);
  g.o = 0.9;
  map.add(g);
  const auto views = map.render(pose, intr, false);
  RgbdFrame frame;
  frame.pose = pose;
  frame.rgb = views.color;
  for (size_t i = 0; i < frame.rgb.size(); ++i) frame.rgb[i] += Vec3(0.2, 0.2, 0.2);
  frame.depth = ImageD(16, 16, kInvalidDepth);
  LossWeights w;
  w.w_d = 0.0;
  w.w_n = 0.0;
  const SurfelGradients grads = gradients(map, frame, pose, intr, w);
  for (int ch = 0; ch < 3; ++ch) CHECK(grads.c[0][ch] < 0.0);
}

TEST_CASE("gradients: zero-contribution surfel gets zero gradients") {
  CameraIntrinsics intr;
  intr.width = 8;
  intr.height = 8;
  Pose pose;
  const CameraFrame cam = CameraFrame::from_pose(pose);
  SplatMap map;
  Rng rng(13);
  map.add(random_facing_surfel(rng, cam));
  Surfel behind;
  behind.x = cam.to_world(Vec3(0, 0, -2));
  map.add(behind);
  RgbdFrame frame;
  frame.pose = pose;
  frame.rgb = ImageV3(8, 8, Vec3(0.5, 0.5, 0.5));
  frame.depth = ImageD(8, 8, 1.0);
  const SurfelGradients grads = gradients(map, frame, pose, intr);
  CHECK(grads.x[1].isZero(0.0));
  CHECK(grads.q[1].isZero(0.0));
  CHECK(grads.s[1].isZero(0.0));
  CHECK(grads.c[1].isZero(0.0));
  CHECK(grads.o[1] == 0.0);
}

TEST_CASE("gradients: analytic matches central finite differences") {
  const GradCheckReport r = run_gradcheck(2024, 10);
  CHECK(r.failures == 0);
  CHECK(r.coordinates_checked > 400);
  CHECK(r.worst_rel_error < 1e-3);
}

TEST_CASE("train_step: single-frame history runs and keeps quaternions unit") {
  const auto scene = builtin_room_scene();
  CameraIntrinsics intr;
  intr.width = 16;
  intr.height = 16;
  Pose pose;
  pose.position = Vec3(2, 2, 1.2);
  Rng rng(17);
  RgbdFrame frame = render_gt(scene, pose, intr, 0.0, rng);
  frame.frame_index = 0;

  SplatMap map;
  const ImageV3 normals = normal_from_depth(frame.depth, intr);
  DensifyMask mask(16, 16, 1);
  spawn_surfels(map, frame, mask, normals, intr, 0);
  REQUIRE(map.size() > 10);

  SurfelOptimizer opt;
  TrainConfig cfg;
  cfg.iterations_per_step = 5;
  Rng trng(19);
  const auto trace = train_step(map, opt, {frame}, intr, cfg, trng);
  CHECK(trace.size() == 5);
  for (const Surfel& g : map.surfels()) {
    CHECK(g.q.norm() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(g.o >= 1e-4);
    CHECK(g.o <= 1.0 - 1e-4);
    CHECK(g.s.minCoeff() >= 1e-3);
    CHECK(g.s.maxCoeff() <= 0.5);
    CHECK(g.k == 0.0);  // confidence is not trainable
  }
}

TEST_CASE("train_step: single-surfel toy decreases monotonically below 10%") {
  CameraIntrinsics intr;
  intr.width = 16;
  intr.height = 16;
  Pose pose;
  const CameraFrame cam = CameraFrame::from_pose(pose);
  SplatMap map;
  Surfel g;
  g.x = cam.to_world(Vec3(0, 0, 1.5));
  Mat3 R;
  R.col(0) = cam.R_wc.row(0).transpose();
  R.col(1) = -cam.R_wc.row(1).transpose();
  R.col(2) = -cam.R_wc.row(2).transpose();
  g.q = Quat(R).normalized();
  g.s = Vec2(0.5, 0.5);
  g.c = Vec3(0.1, 0.2, 0.3);
  g.o = 0.9;
  map.add(g);

  // target: the same surfel with a color offset the optimizer can close
  // within the budget (Adam moves about lr_c per iteration on an L1
  // loss); equal gap sizes keep the channels converging in step
  SplatMap target = map;
  target.surfels()[0].c = g.c + Vec3(0.22, 0.22, -0.22);
  const auto tviews = target.render(pose, intr, false);
  RgbdFrame frame;
  frame.pose = pose;
  frame.rgb = tviews.color;
  frame.depth = tviews.depth;
  frame.frame_index = 0;

  SurfelOptimizer opt;
  TrainConfig cfg;
  cfg.iterations_per_step = 50;
  cfg.weights.w_n = 0.0;  // geometry already matches; fit color and depth
  Rng trng(29);
  const auto trace = train_step(map, opt, {frame}, intr, cfg, trng);
  const double initial = trace.front().total;
  // descent judged on 5-iteration windows: within a window the opacity
  // and color terms race and the L1 kinks dither at the lr scale
  std::vector<double> window_means;
  for (size_t w = 0; w + 5 <= trace.size(); w += 5) {
    double m = 0.0;
    for (size_t i = w; i < w + 5; ++i) m += trace[i].total / 5.0;
    window_means.push_back(m);
  }
  for (size_t i = 1; i < window_means.size(); ++i)
    if (window_means[i - 1] > 0.12 * initial)
      CHECK(window_means[i] < window_means[i - 1]);
  CHECK(trace.back().total < 0.1 * initial);
}

TEST_CASE("train_step: color-only overdetermined toy reaches the L1 optimum") {
  CameraIntrinsics intr;
  intr.width = 16;
  intr.height = 16;
  Pose pose;
  const CameraFrame cam = CameraFrame::from_pose(pose);
  SplatMap map;
  Surfel g;
  g.x = cam.to_world(Vec3(0, 0, 1.5));
  Mat3 R;
  R.col(0) = cam.R_wc.row(0).transpose();
  R.col(1) = -cam.R_wc.row(1).transpose();
  R.col(2) = -cam.R_wc.row(2).transpose();
  g.q = Quat(R).normalized();
  g.s = Vec2(0.5, 0.5);
  g.c = Vec3(0.1, 0.1, 0.1);
  g.o = 1.0 - 1e-4;
  map.add(g);

  const auto views = map.render(pose, intr, false);
  RgbdFrame frame;
  frame.pose = pose;
  frame.rgb = views.color;
  // target color: what the surfel would render with c = 0.6
  for (size_t i = 0; i < frame.rgb.size(); ++i)
    frame.rgb[i] = frame.rgb[i] / 0.1 * 0.6;
  frame.depth = ImageD(16, 16, kInvalidDepth);

  TrainConfig cfg;
  cfg.weights.w_d = 0.0;
  cfg.weights.w_n = 0.0;
  cfg.iterations_per_step = 600;
  cfg.lr_c = 2e-3;  // Adam dithers at roughly lr around an L1 optimum
  // geometry fixed: zero the other learning rates
  cfg.lr_x = 0.0;
  cfg.lr_q = 0.0;
  cfg.lr_s = 0.0;
  cfg.lr_o = 0.0;
  SurfelOptimizer opt;
  Rng trng(31);
  const auto trace = train_step(map, opt, {frame}, intr, cfg, trng);
  CHECK(trace.back().total < 1e-3);
  CHECK(map.surfels()[0].c.isApprox(Vec3(0.6, 0.6, 0.6), 0.02));
}

TEST_CASE("optimizer: moments follow the surfel list through prune remaps") {
  SurfelOptimizer opt;
  opt.resize(4);
  CHECK(opt.size() == 4);
  std::vector<int> remap = {0, -1, 1, -1};
  opt.apply_remap(remap);
  CHECK(opt.size() == 2);
}
