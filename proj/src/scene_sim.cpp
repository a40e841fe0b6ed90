#include "asr/scene_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "asr/parallel.hpp"
#include "asr/voxel_map.hpp"

namespace asr {

namespace {

Aabb primitive_bounds(const ScenePrimitive& prim) {
  if (const auto* box = std::get_if<BoxPrimitive>(&prim)) return {box->min, box->max};
  const auto& tri = std::get<TrianglePrimitive>(prim);
  Aabb b{tri.v0, tri.v0};
  for (const Vec3& v : {tri.v1, tri.v2}) {
    b.min = b.min.cwiseMin(v);
    b.max = b.max.cwiseMax(v);
  }
  return b;
}

double triangle_area(const TrianglePrimitive& t) {
  return 0.5 * (t.v1 - t.v0).cross(t.v2 - t.v0).norm();
}

}  // namespace

void GroundTruthScene::validate() const {
  if ((bounds.extent().array() <= 0.0).any())
    throw std::invalid_argument("scene bounds must have positive extent");
  for (const auto& prim : primitives) {
    const Aabb b = primitive_bounds(prim);
    if (!bounds.contains(b.min) || !bounds.contains(b.max))
      throw std::invalid_argument("primitive outside scene bounds");
    if (const auto* box = std::get_if<BoxPrimitive>(&prim)) {
      if ((box->max.array() <= box->min.array()).any())
        throw std::invalid_argument("box with non-positive extent");
    } else if (triangle_area(std::get<TrianglePrimitive>(prim)) <= 0.0) {
      throw std::invalid_argument("degenerate triangle");
    }
  }
}

std::optional<RayHit> intersect_box(const BoxPrimitive& box, const Vec3& origin,
                                    const Vec3& dir) {
  // slab test; tracks the axis of the entering face for the normal
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  int enter_axis = -1;
  double enter_sign = 1.0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < box.min[a] || origin[a] > box.max[a]) return std::nullopt;
      continue;
    }
    const double inv = 1.0 / dir[a];
    double t0 = (box.min[a] - origin[a]) * inv;
    double t1 = (box.max[a] - origin[a]) * inv;
    double sign = -1.0;  // hit min face -> outward normal -a
    if (t0 > t1) {
      std::swap(t0, t1);
      sign = 1.0;
    }
    if (t0 > t_enter) {
      t_enter = t0;
      enter_axis = a;
      enter_sign = sign;
    }
    t_exit = std::min(t_exit, t1);
    if (t_enter > t_exit) return std::nullopt;
  }
  double t = t_enter;
  Vec3 normal = Vec3::Zero();
  if (t < 0.0 || enter_axis < 0) {
    // origin inside the box: report the exit face
    t = t_exit;
    if (t < 0.0) return std::nullopt;
    const Vec3 p = origin + t * dir;
    int axis = 0;
    double best = std::numeric_limits<double>::infinity();
    double sign = 1.0;
    for (int a = 0; a < 3; ++a) {
      const double dmin = std::abs(p[a] - box.min[a]);
      const double dmax = std::abs(p[a] - box.max[a]);
      if (dmin < best) {
        best = dmin;
        axis = a;
        sign = -1.0;
      }
      if (dmax < best) {
        best = dmax;
        axis = a;
        sign = 1.0;
      }
    }
    normal[axis] = sign;
  } else {
    normal[enter_axis] = enter_sign;
  }
  // flip toward the ray origin
  if (normal.dot(dir) > 0.0) normal = -normal;
  RayHit hit;
  hit.distance = t;
  hit.color = box.rgb;
  hit.normal = normal;
  return hit;
}

std::optional<RayHit> intersect_triangle(const TrianglePrimitive& tri, const Vec3& origin,
                                         const Vec3& dir) {
  // Moeller-Trumbore
  const Vec3 e1 = tri.v1 - tri.v0;
  const Vec3 e2 = tri.v2 - tri.v0;
  const Vec3 pvec = dir.cross(e2);
  const double det = e1.dot(pvec);
  if (std::abs(det) < 1e-15) return std::nullopt;
  const double inv_det = 1.0 / det;
  const Vec3 tvec = origin - tri.v0;
  const double u = tvec.dot(pvec) * inv_det;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 qvec = tvec.cross(e1);
  const double v = dir.dot(qvec) * inv_det;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(qvec) * inv_det;
  if (t < 0.0) return std::nullopt;
  Vec3 normal = e1.cross(e2).normalized();
  if (normal.dot(dir) > 0.0) normal = -normal;
  RayHit hit;
  hit.distance = t;
  hit.color = tri.rgb;
  hit.normal = normal;
  return hit;
}

std::optional<RayHit> ray_cast(const GroundTruthScene& scene, const Vec3& origin,
                               const Vec3& dir) {
  std::optional<RayHit> best;
  for (const auto& prim : scene.primitives) {
    std::optional<RayHit> hit;
    if (const auto* box = std::get_if<BoxPrimitive>(&prim))
      hit = intersect_box(*box, origin, dir);
    else
      hit = intersect_triangle(std::get<TrianglePrimitive>(prim), origin, dir);
    if (hit && (!best || hit->distance < best->distance)) best = hit;
  }
  return best;
}

RgbdFrame render_gt(const GroundTruthScene& scene, const Pose& pose,
                    const CameraIntrinsics& intr, double noise_sigma_slope, Rng& rng) {
  RgbdFrame frame;
  frame.rgb = ImageV3(intr.height, intr.width, Vec3::Zero());
  frame.depth = ImageD(intr.height, intr.width, kInvalidDepth);
  frame.pose = pose;
  const CameraFrame cam = CameraFrame::from_pose(pose);

  // One rng stream per row so parallel rendering stays deterministic.
  // The per-frame tag comes from the parent state, so successive frames
  // draw fresh noise.
  const uint64_t frame_tag = rng.next_u64();
  std::vector<Rng> row_rngs;
  row_rngs.reserve(intr.height);
  for (int y = 0; y < intr.height; ++y)
    row_rngs.emplace_back(hash_combine(frame_tag, static_cast<uint64_t>(y)));

  parallel_blocks(intr.height, [&](int, int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      Rng& row_rng = row_rngs[y];
      for (int x = 0; x < intr.width; ++x) {
        const Vec3 dir = pixel_ray_world(cam, intr, x + 0.5, y + 0.5);
        const auto hit = ray_cast(scene, cam.origin, dir);
        if (!hit) continue;
        frame.rgb.at(y, x) = hit->color;
        double d = hit->distance;
        if (noise_sigma_slope > 0.0) d += noise_sigma_slope * d * row_rng.normal();
        frame.depth.at(y, x) =
            (d >= intr.d_near && d <= intr.d_far) ? d : kInvalidDepth;
      }
    }
  });
  return frame;
}

std::vector<SurfaceSample> sample_surface_points(const GroundTruthScene& scene, int n, Rng& rng) {
  if (scene.primitives.empty()) throw std::invalid_argument("empty scene");
  if (n <= 0) return {};

  // decompose every primitive surface into triangles (12 per box)
  struct Tri {
    Vec3 a, b, c;
    Vec3 normal;  // outward for boxes, plane normal for triangles
    double area;
  };
  std::vector<Tri> tris;
  auto push_quad = [&tris](const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d,
                           const Vec3& nrm) {
    for (const auto& t : {std::array<Vec3, 3>{a, b, c}, std::array<Vec3, 3>{a, c, d}}) {
      Tri tri{t[0], t[1], t[2], nrm, 0.5 * (t[1] - t[0]).cross(t[2] - t[0]).norm()};
      if (tri.area > 0.0) tris.push_back(tri);
    }
  };
  for (const auto& prim : scene.primitives) {
    if (const auto* box = std::get_if<BoxPrimitive>(&prim)) {
      const Vec3& lo = box->min;
      const Vec3& hi = box->max;
      const Vec3 v000 = lo, v111 = hi;
      const Vec3 v100(hi.x(), lo.y(), lo.z()), v010(lo.x(), hi.y(), lo.z()),
          v001(lo.x(), lo.y(), hi.z()), v110(hi.x(), hi.y(), lo.z()),
          v101(hi.x(), lo.y(), hi.z()), v011(lo.x(), hi.y(), hi.z());
      push_quad(v000, v010, v110, v100, Vec3(0, 0, -1));
      push_quad(v001, v101, v111, v011, Vec3(0, 0, 1));
      push_quad(v000, v100, v101, v001, Vec3(0, -1, 0));
      push_quad(v010, v011, v111, v110, Vec3(0, 1, 0));
      push_quad(v000, v001, v011, v010, Vec3(-1, 0, 0));
      push_quad(v100, v110, v111, v101, Vec3(1, 0, 0));
    } else {
      const auto& t = std::get<TrianglePrimitive>(prim);
      tris.push_back({t.v0, t.v1, t.v2, (t.v1 - t.v0).cross(t.v2 - t.v0).normalized(),
                      triangle_area(t)});
    }
  }

  std::vector<double> cdf(tris.size());
  double total = 0.0;
  for (size_t i = 0; i < tris.size(); ++i) {
    total += tris[i].area;
    cdf[i] = total;
  }
  if (total <= 0.0) throw std::invalid_argument("scene has zero surface area");

  std::vector<SurfaceSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double r = rng.uniform(0.0, total);
    const size_t idx = std::lower_bound(cdf.begin(), cdf.end(), r) - cdf.begin();
    const Tri& t = tris[std::min(idx, tris.size() - 1)];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    out.push_back({t.a + u * (t.b - t.a) + v * (t.c - t.a), t.normal});
  }
  return out;
}

std::vector<Pose> sample_test_viewpoints(const GroundTruthScene& scene, const VoxelMap& voxel_map,
                                         int n, Rng& rng, const TestViewpointConfig& cfg) {
  (void)scene;
  if (n <= 0) return {};
  std::vector<Vec3i> free_voxels;
  for (int i = 0; i < voxel_map.dims().x(); ++i)
    for (int j = 0; j < voxel_map.dims().y(); ++j)
      for (int k = 0; k < voxel_map.dims().z(); ++k)
        if (voxel_map.state(Vec3i(i, j, k)) == VoxelState::kFree)
          free_voxels.emplace_back(i, j, k);
  if (free_voxels.empty()) throw std::runtime_error("no free space to sample viewpoints");
  if (!cfg.with_replacement && static_cast<int>(free_voxels.size()) < n)
    throw std::runtime_error("fewer free voxels than requested viewpoints");

  std::vector<Pose> poses;
  poses.reserve(n);
  const double vs = voxel_map.voxel_size();
  for (int i = 0; i < n; ++i) {
    const Vec3i idx = free_voxels[rng.uniform_index(free_voxels.size())];
    const Vec3 lo = voxel_map.origin() + vs * idx.cast<double>();
    Pose p;
    p.position = lo + vs * Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    p.yaw = rng.uniform(0.0, 2.0 * kPi);
    p.pitch = rng.uniform(cfg.pitch_min, cfg.pitch_max);
    poses.push_back(p);
  }
  return poses;
}

GroundTruthScene builtin_room_scene() {
  GroundTruthScene scene;
  scene.bounds = {Vec3(0.0, 0.0, 0.0), Vec3(4.0, 4.0, 2.5)};
  const double w = 0.05;  // wall thickness
  auto box = [&scene](Vec3 lo, Vec3 hi, Vec3 rgb) {
    scene.primitives.push_back(BoxPrimitive{lo, hi, rgb});
  };
  // shell
  box({0, 0, 0}, {4, 4, w}, {0.55, 0.50, 0.45});            // floor
  box({0, 0, 2.5 - w}, {4, 4, 2.5}, {0.85, 0.85, 0.82});    // ceiling
  box({0, 0, w}, {4, w, 2.5 - w}, {0.75, 0.30, 0.25});      // south wall
  box({0, 4 - w, w}, {4, 4, 2.5 - w}, {0.25, 0.45, 0.75});  // north wall
  box({0, w, w}, {w, 4 - w, 2.5 - w}, {0.30, 0.65, 0.35});  // west wall
  box({4 - w, w, w}, {4, 4 - w, 2.5 - w}, {0.80, 0.70, 0.25});  // east wall
  // interior obstacles, kept thin so every solid voxel touches surface
  box({0.9, 0.9, w}, {1.3, 1.3, 1.1}, {0.85, 0.35, 0.55});   // pillar SW
  box({2.8, 2.9, w}, {3.2, 3.3, 1.6}, {0.35, 0.75, 0.75});   // pillar NE
  box({1.7, 2.2, 0.7}, {2.5, 2.6, 0.95}, {0.65, 0.45, 0.85});  // floating slab
  box({2.9, 0.8, w}, {3.3, 1.2, 0.55}, {0.95, 0.60, 0.20});  // crate SE
  // a couple of colored triangles on the walls for texture
  scene.primitives.push_back(TrianglePrimitive{
      {0.6, w + 1e-3, 0.6}, {1.6, w + 1e-3, 0.6}, {1.1, w + 1e-3, 1.8}, {0.95, 0.9, 0.2}});
  scene.primitives.push_back(TrianglePrimitive{
      {2.2, 4 - w - 1e-3, 0.5}, {3.4, 4 - w - 1e-3, 0.9}, {2.6, 4 - w - 1e-3, 1.9},
      {0.15, 0.15, 0.5}});
  scene.validate();
  return scene;
}

GroundTruthScene load_scene(const std::string& path_or_builtin) {
  if (path_or_builtin == "builtin:room") return builtin_room_scene();
  if (path_or_builtin.rfind("builtin:", 0) == 0)
    throw std::invalid_argument("unknown builtin scene: " + path_or_builtin);

  std::ifstream f(path_or_builtin);
  if (!f) throw std::runtime_error("cannot open scene file: " + path_or_builtin);
  nlohmann::json j;
  f >> j;

  auto vec3 = [](const nlohmann::json& a) { return Vec3(a.at(0), a.at(1), a.at(2)); };
  GroundTruthScene scene;
  scene.bounds.min = vec3(j.at("bounds").at("min"));
  scene.bounds.max = vec3(j.at("bounds").at("max"));
  for (const auto& p : j.at("primitives")) {
    const std::string kind = p.at("kind");
    if (kind == "box")
      scene.primitives.push_back(BoxPrimitive{vec3(p.at("min")), vec3(p.at("max")),
                                              vec3(p.at("rgb"))});
    else if (kind == "triangle")
      scene.primitives.push_back(TrianglePrimitive{vec3(p.at("v0")), vec3(p.at("v1")),
                                                   vec3(p.at("v2")), vec3(p.at("rgb"))});
    else
      throw std::invalid_argument("unknown primitive kind: " + kind);
  }
  scene.validate();
  return scene;
}

}  // namespace asr
