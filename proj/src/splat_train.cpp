#include "asr/splat_train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "asr/parallel.hpp"

namespace asr {

namespace {

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline Vec3 cam_ray(const CameraIntrinsics& intr, int x, int y) {
  return Vec3((x + 0.5 - intr.cx()) / intr.fx(), (y + 0.5 - intr.cy()) / intr.fy(), 1.0)
      .normalized();
}

struct DepthNormalGraph {
  ImageD filtered;        // B
  Image<uint8_t> fvalid;  // B defined
  ImageV3 tx, ty, f;
  Image<int8_t> flip;     // 0 = no normal
  ImageV3 normals;
};

DepthNormalGraph normal_graph(const ImageD& depth, const CameraIntrinsics& intr,
                              const BilateralParams& p) {
  const int h = depth.height(), w = depth.width();
  DepthNormalGraph g;
  g.filtered = ImageD(h, w, 0.0);
  g.fvalid = Image<uint8_t>(h, w, 0);
  g.tx = ImageV3(h, w, Vec3::Zero());
  g.ty = ImageV3(h, w, Vec3::Zero());
  g.f = ImageV3(h, w, Vec3::Zero());
  g.flip = Image<int8_t>(h, w, 0);
  g.normals = ImageV3(h, w, Vec3::Zero());

  const double inv2ss = 1.0 / (2.0 * p.sigma_space_px * p.sigma_space_px);
  const double inv2sr = 1.0 / (2.0 * p.sigma_range_m * p.sigma_range_m);

  parallel_blocks(h, [&](int, int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < w; ++x) {
        const double dc = depth.at(y, x);
        if (dc == kInvalidDepth) continue;
        double s0 = 0.0, s1 = 0.0;
        for (int dy = -p.radius; dy <= p.radius; ++dy)
          for (int dx = -p.radius; dx <= p.radius; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            const double dv = depth.at(yy, xx);
            if (dv == kInvalidDepth) continue;
            const double wgt = std::exp(-(dx * dx + dy * dy) * inv2ss) *
                               std::exp(-(dc - dv) * (dc - dv) * inv2sr);
            s0 += wgt;
            s1 += wgt * dv;
          }
        g.filtered.at(y, x) = s1 / s0;
        g.fvalid.at(y, x) = 1;
      }
  });

  parallel_blocks(h, [&](int, int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < w; ++x) {
        if (y == 0 || y == h - 1 || x == 0 || x == w - 1) continue;
        if (!g.fvalid.at(y, x) || !g.fvalid.at(y, x - 1) || !g.fvalid.at(y, x + 1) ||
            !g.fvalid.at(y - 1, x) || !g.fvalid.at(y + 1, x))
          continue;
        auto point = [&](int yy, int xx) { return g.filtered.at(yy, xx) * cam_ray(intr, xx, yy); };
        const Vec3 tx = 0.5 * (point(y, x + 1) - point(y, x - 1));
        const Vec3 ty = 0.5 * (point(y + 1, x) - point(y - 1, x));
        const Vec3 f = tx.cross(ty);
        const double fn = f.norm();
        if (fn < 1e-12) continue;
        const Vec3 pc = point(y, x);
        const int8_t flip = f.dot(pc) > 0.0 ? -1 : 1;
        g.tx.at(y, x) = tx;
        g.ty.at(y, x) = ty;
        g.f.at(y, x) = f;
        g.flip.at(y, x) = flip;
        g.normals.at(y, x) = static_cast<double>(flip) * f / fn;
      }
  });
  return g;
}

// Scatters d(loss)/d(normals) back to d(loss)/d(depth). Piecewise-constant
// branches (validity, flip sign) are treated as constants.
ImageD normal_graph_backward(const DepthNormalGraph& g, const ImageV3& g_normals,
                             const ImageD& depth, const CameraIntrinsics& intr,
                             const BilateralParams& p) {
  const int h = depth.height(), w = depth.width();
  ImageV3 g_point(h, w, Vec3::Zero());

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (g.flip.at(y, x) == 0) continue;
      const Vec3& gn = g_normals.at(y, x);
      if (gn.isZero(0.0)) continue;
      const Vec3& f = g.f.at(y, x);
      const double fn = f.norm();
      const Vec3 fhat = f / fn;
      const Vec3 gf = static_cast<double>(g.flip.at(y, x)) *
                      (gn - fhat * fhat.dot(gn)) / fn;
      // f = tx x ty
      const Vec3 gtx = g.ty.at(y, x).cross(gf);
      const Vec3 gty = gf.cross(g.tx.at(y, x));
      g_point.at(y, x + 1) += 0.5 * gtx;
      g_point.at(y, x - 1) -= 0.5 * gtx;
      g_point.at(y + 1, x) += 0.5 * gty;
      g_point.at(y - 1, x) -= 0.5 * gty;
    }

  // p(u) = B(u) * ray(u)
  ImageD g_filtered(h, w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!g.fvalid.at(y, x)) continue;
      const Vec3& gp = g_point.at(y, x);
      if (gp.isZero(0.0)) continue;
      g_filtered.at(y, x) = cam_ray(intr, x, y).dot(gp);
    }

  // bilateral filter backward, including the range-kernel dependence
  const double inv2ss = 1.0 / (2.0 * p.sigma_space_px * p.sigma_space_px);
  const double inv2sr = 1.0 / (2.0 * p.sigma_range_m * p.sigma_range_m);
  ImageD g_depth(h, w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gb = g_filtered.at(y, x);
      if (gb == 0.0 || !g.fvalid.at(y, x)) continue;
      const double dc = depth.at(y, x);
      double s0 = 0.0;
      for (int dy = -p.radius; dy <= p.radius; ++dy)
        for (int dx = -p.radius; dx <= p.radius; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const double dv = depth.at(yy, xx);
          if (dv == kInvalidDepth) continue;
          s0 += std::exp(-(dx * dx + dy * dy) * inv2ss) *
                std::exp(-(dc - dv) * (dc - dv) * inv2sr);
        }
      const double B = g.filtered.at(y, x);
      const double dS1 = gb / s0;
      const double dS0 = -gb * B / s0;
      for (int dy = -p.radius; dy <= p.radius; ++dy)
        for (int dx = -p.radius; dx <= p.radius; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const double dv = depth.at(yy, xx);
          if (dv == kInvalidDepth) continue;
          const double wgt = std::exp(-(dx * dx + dy * dy) * inv2ss) *
                             std::exp(-(dc - dv) * (dc - dv) * inv2sr);
          const double dW = dS1 * dv + dS0;
          g_depth.at(yy, xx) += dS1 * wgt;
          const double delta = dc - dv;
          const double range_term = dW * wgt * (-2.0 * delta * inv2sr);
          g_depth.at(y, x) += range_term;
          g_depth.at(yy, xx) -= range_term;
        }
    }
  return g_depth;
}

struct LossGrads {
  LossParts parts;
  ImageV3 g_color;
  ImageD g_depth;   // direct L1 part only; the normal-chain part is added later
  ImageV3 g_normal;
  ImageV3 g_tilde;  // upstream into the depth-derived normals
};

// Forward loss plus per-pixel upstream gradients for each rendered channel.
LossGrads loss_with_pixel_grads(const ImageV3& color, const ImageD& depth, const ImageV3& normal,
                                const ImageV3& tilde_normals, const RgbdFrame& frame,
                                const LossWeights& wts) {
  const int h = frame.rgb.height(), w = frame.rgb.width();
  LossGrads out;
  out.g_color = ImageV3(h, w, Vec3::Zero());
  out.g_depth = ImageD(h, w, 0.0);
  out.g_normal = ImageV3(h, w, Vec3::Zero());
  out.g_tilde = ImageV3(h, w, Vec3::Zero());

  const int n_px = h * w;
  // photometric term: all pixels, channel mean
  double l_c = 0.0;
  for (int i = 0; i < n_px; ++i) l_c += (color[i] - frame.rgb[i]).cwiseAbs().mean();
  l_c /= n_px;

  // depth term: both depths valid
  int n_d = 0;
  double l_d = 0.0;
  for (int i = 0; i < n_px; ++i)
    if (frame.depth[i] != kInvalidDepth && depth[i] != kInvalidDepth) {
      l_d += std::abs(depth[i] - frame.depth[i]);
      ++n_d;
    }
  if (n_d > 0) l_d /= n_d;

  // cosine term: pixels where both normal maps are non-degenerate
  constexpr double kNormEps = 1e-8;
  int n_cos = 0;
  double l_cos = 0.0;
  for (int i = 0; i < n_px; ++i) {
    const double nu = normal[i].norm(), nv = tilde_normals[i].norm();
    if (nu <= kNormEps || nv <= kNormEps) continue;
    l_cos += 1.0 - normal[i].dot(tilde_normals[i]) / (nu * nv);
    ++n_cos;
  }
  if (n_cos > 0) l_cos /= n_cos;

  // total variation of the raw rendered normals over interior pixels
  const int n_tv = (h - 1) * (w - 1);
  double l_tv = 0.0;
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x + 1 < w; ++x)
      l_tv += (normal.at(y, x) - normal.at(y, x + 1)).cwiseAbs().sum() +
              (normal.at(y, x) - normal.at(y + 1, x)).cwiseAbs().sum();
  if (n_tv > 0) l_tv /= n_tv;

  out.parts.color = l_c;
  out.parts.depth = l_d;
  out.parts.normal = l_cos + l_tv;
  out.parts.total = wts.w_c * l_c + wts.w_d * l_d + wts.w_n * out.parts.normal;

  // ---- pixel-level gradients ----
  const double c_scale = wts.w_c / (n_px * 3.0);
  for (int i = 0; i < n_px; ++i) {
    const Vec3 d = color[i] - frame.rgb[i];
    out.g_color[i] = c_scale * Vec3(sgn(d.x()), sgn(d.y()), sgn(d.z()));
  }
  if (n_d > 0) {
    const double d_scale = wts.w_d / n_d;
    for (int i = 0; i < n_px; ++i)
      if (frame.depth[i] != kInvalidDepth && depth[i] != kInvalidDepth)
        out.g_depth[i] = d_scale * sgn(depth[i] - frame.depth[i]);
  }
  if (n_cos > 0) {
    const double cos_scale = wts.w_n / n_cos;
    for (int i = 0; i < n_px; ++i) {
      const Vec3& u = normal[i];
      const Vec3& v = tilde_normals[i];
      const double nu = u.norm(), nv = v.norm();
      if (nu <= kNormEps || nv <= kNormEps) continue;
      const double dot = u.dot(v);
      out.g_normal[i] += cos_scale * (-(v / (nu * nv) - dot * u / (nu * nu * nu * nv)));
      out.g_tilde[i] += cos_scale * (-(u / (nu * nv) - dot * v / (nv * nv * nv * nu)));
    }
  }
  if (n_tv > 0) {
    const double tv_scale = wts.w_n / n_tv;
    for (int y = 0; y + 1 < h; ++y)
      for (int x = 0; x + 1 < w; ++x)
        for (int ch = 0; ch < 3; ++ch) {
          const double sx = sgn(normal.at(y, x)[ch] - normal.at(y, x + 1)[ch]);
          out.g_normal.at(y, x)[ch] += tv_scale * sx;
          out.g_normal.at(y, x + 1)[ch] -= tv_scale * sx;
          const double sy = sgn(normal.at(y, x)[ch] - normal.at(y + 1, x)[ch]);
          out.g_normal.at(y, x)[ch] += tv_scale * sy;
          out.g_normal.at(y + 1, x)[ch] -= tv_scale * sy;
        }
  }
  return out;
}

// dR/dq for the unit-quaternion rotation formula, q = (w, x, y, z).
void quat_rotation_partials(const Eigen::Vector4d& q, Mat3 dR[4]) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  dR[0] << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
  dR[1] << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
  dR[2] << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
  dR[3] << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
}

}  // namespace

ImageV3 normal_from_depth(const ImageD& depth, const CameraIntrinsics& intr,
                          const BilateralParams& params) {
  return normal_graph(depth, intr, params).normals;
}

LossParts loss(const RenderedViews& rendered, const RgbdFrame& frame,
               const CameraIntrinsics& intr, const LossWeights& weights) {
  if (rendered.color.height() != frame.rgb.height() ||
      rendered.color.width() != frame.rgb.width())
    throw std::invalid_argument("loss: shape mismatch");
  const ImageV3 tilde = normal_from_depth(rendered.depth, intr);
  return loss_with_pixel_grads(rendered.color, rendered.depth, rendered.normal, tilde, frame,
                               weights)
      .parts;
}

void SurfelGradients::resize_zero(size_t n) {
  x.assign(n, Vec3::Zero());
  q.assign(n, Eigen::Vector4d::Zero());
  s.assign(n, Vec2::Zero());
  c.assign(n, Vec3::Zero());
  o.assign(n, 0.0);
}

void SurfelGradients::add_scaled(const SurfelGradients& other, double scale) {
  for (size_t i = 0; i < x.size(); ++i) {
    x[i] += scale * other.x[i];
    q[i] += scale * other.q[i];
    s[i] += scale * other.s[i];
    c[i] += scale * other.c[i];
    o[i] += scale * other.o[i];
  }
}

SurfelGradients gradients(const SplatMap& map, const RgbdFrame& frame, const Pose& pose,
                          const CameraIntrinsics& intr, const LossWeights& weights,
                          LossParts* loss_out) {
  const SplatRenderParams params;
  const std::vector<Surfel>& surfels = map.surfels();
  const size_t n = surfels.size();
  SurfelGradients grads;
  grads.resize_zero(n);

  const CameraFrame cam = CameraFrame::from_pose(pose);
  const int h = intr.height, w = intr.width;
  const detail::BinnedView bins =
      n > 0 ? detail::bin_surfels(surfels, cam, intr, params) : detail::BinnedView{};

  // ---- forward compositing ----
  ImageV3 color(h, w, Vec3::Zero()), normal(h, w, Vec3::Zero());
  ImageD depth(h, w, kInvalidDepth), opacity(h, w, 0.0);
  if (n > 0) {
    parallel_blocks(h, [&](int, int y0, int y1) {
      for (int y = y0; y < y1; ++y)
        for (int x = 0; x < w; ++x) {
          const size_t px = static_cast<size_t>(y) * w + x;
          double T = 1.0, d_acc = 0.0, o_acc = 0.0;
          Vec3 c_acc = Vec3::Zero(), n_acc = Vec3::Zero();
          for (const auto& e : bins.pixel_entries[px]) {
            if (T < params.transmittance_cutoff) break;
            const double wgt = T * e.alpha;
            c_acc += wgt * surfels[e.surfel].c;
            d_acc += wgt * e.depth;
            n_acc += wgt * bins.info[e.surfel].n_view;
            o_acc += wgt;
            T *= (1.0 - e.alpha);
          }
          color[px] = c_acc;
          normal[px] = n_acc;
          opacity[px] = o_acc;
          depth[px] = o_acc < params.opacity_valid_min ? kInvalidDepth : d_acc;
        }
    });
  }

  // ---- loss and pixel-level gradients ----
  const BilateralParams bp;
  const DepthNormalGraph ngraph = normal_graph(depth, intr, bp);
  LossGrads lg = loss_with_pixel_grads(color, depth, normal, ngraph.normals, frame, weights);
  if (loss_out) *loss_out = lg.parts;
  if (n == 0) return grads;

  // depth gradient via the derived-normal chain
  const ImageD g_depth_chain = normal_graph_backward(ngraph, lg.g_tilde, depth, intr, bp);
  for (int i = 0; i < h * w; ++i) lg.g_depth[i] += g_depth_chain[i];

  // ---- compositing backward ----
  std::vector<Vec2> g_u(n, Vec2::Zero());
  std::vector<Mat2> g_cov(n, Mat2::Zero());
  std::vector<Vec3> g_nview(n, Vec3::Zero());
  std::vector<Vec3> g_nworld(n, Vec3::Zero());

  std::vector<double> t_stack;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t px = static_cast<size_t>(y) * w + x;
      const auto& entries = bins.pixel_entries[px];
      if (entries.empty()) continue;
      const Vec3& gI = lg.g_color[px];
      const double gD = depth[px] == kInvalidDepth ? 0.0 : lg.g_depth[px];
      const Vec3& gN = lg.g_normal[px];
      if (gI.isZero(0.0) && gD == 0.0 && gN.isZero(0.0)) continue;

      // forward transmittance replay with the same early stop
      t_stack.clear();
      double T = 1.0;
      for (const auto& e : entries) {
        if (T < params.transmittance_cutoff) break;
        t_stack.push_back(T);
        T *= (1.0 - e.alpha);
      }

      Vec3 S_c = Vec3::Zero(), S_n = Vec3::Zero();
      double S_d = 0.0;
      for (int i = static_cast<int>(t_stack.size()) - 1; i >= 0; --i) {
        const auto& e = entries[i];
        const Surfel& g = surfels[e.surfel];
        const detail::SurfelViewInfo& info = bins.info[e.surfel];
        const double Ti = t_stack[i];
        const double wgt = Ti * e.alpha;

        grads.c[e.surfel] += wgt * gI;
        g_nview[e.surfel] += wgt * gN;

        if (gD != 0.0) {
          const double g_di = wgt * gD;
          const Vec3& ray = bins.pixel_rays[px];
          const Vec3 to_center = g.x - cam.origin;
          const auto ds = detail::surfel_ray_depth(g.x, info.R, g.s, cam.origin, ray);
          if (ds.plane_branch) {
            const double denom = info.n_world.dot(ray);
            grads.x[e.surfel] += g_di * info.n_world / denom;
            g_nworld[e.surfel] += g_di * (to_center - ds.depth * ray) / denom;
          } else {
            grads.x[e.surfel] += g_di * to_center / to_center.norm();
          }
        }

        const double g_alpha =
            Ti * (gI.dot(g.c - S_c) + gD * (e.depth - S_d) + gN.dot(info.n_view - S_n));
        if (g_alpha != 0.0) {
          grads.o[e.surfel] += (e.alpha / g.o) * g_alpha;
          const double g_m2 = -0.5 * e.alpha * g_alpha;
          const Vec2 delta(x + 0.5 - info.u.x(), y + 0.5 - info.u.y());
          const Vec2 ci_delta = info.cov_inv * delta;
          g_u[e.surfel] += g_m2 * (-2.0) * ci_delta;  // d m2 / d u_i = -2 C^-1 delta
          g_cov[e.surfel] += g_m2 * (-(ci_delta * ci_delta.transpose()));
        }

        S_c = e.alpha * g.c + (1.0 - e.alpha) * S_c;
        S_d = e.alpha * e.depth + (1.0 - e.alpha) * S_d;
        S_n = e.alpha * info.n_view + (1.0 - e.alpha) * S_n;
      }
    }

  // ---- per-surfel projection backward ----
  const double fx = intr.fx(), fy = intr.fy();
  for (size_t i = 0; i < n; ++i) {
    const detail::SurfelViewInfo& info = bins.info[i];
    if (!info.in_view) continue;
    const Surfel& g = surfels[i];

    Vec3 g_n = g_nworld[i] + info.flip * (cam.R_wc.transpose() * g_nview[i]);

    const Vec3& t = info.t_cam;
    const double Z = t.z(), invZ = 1.0 / Z;
    Vec3 g_t(fx * invZ * g_u[i].x(), fy * invZ * g_u[i].y(),
             -fx * t.x() * invZ * invZ * g_u[i].x() - fy * t.y() * invZ * invZ * g_u[i].y());

    Mat2 Gs = 0.5 * (g_cov[i] + g_cov[i].transpose());
    if (!Gs.isZero(0.0)) {
      Eigen::Matrix<double, 2, 3> J;
      J << fx * invZ, 0.0, -fx * t.x() * invZ * invZ, 0.0, fy * invZ,
          -fy * t.y() * invZ * invZ;
      const Eigen::Matrix<double, 2, 3> A = J * cam.R_wc;

      const double qn = g.q.norm();
      const Eigen::Vector4d qh(g.q.w() / qn, g.q.x() / qn, g.q.y() / qn, g.q.z() / qn);
      const Mat3 R = rotation_from_unit_quat(qh);
      const Mat3 M = Vec3(g.s.x() * g.s.x(), g.s.y() * g.s.y(), 0.0).asDiagonal();
      const Mat3 sigma = R * M * R.transpose();

      const Eigen::Matrix<double, 2, 3> gA = 2.0 * Gs * A * sigma;
      const Mat3 g_sigma = A.transpose() * Gs * A;
      const Eigen::Matrix<double, 2, 3> gJ = gA * cam.R_wc.transpose();

      g_t.x() += gJ(0, 2) * (-fx * invZ * invZ);
      g_t.y() += gJ(1, 2) * (-fy * invZ * invZ);
      g_t.z() += gJ(0, 0) * (-fx * invZ * invZ) + gJ(1, 1) * (-fy * invZ * invZ) +
                 gJ(0, 2) * (2.0 * fx * t.x() * invZ * invZ * invZ) +
                 gJ(1, 2) * (2.0 * fy * t.y() * invZ * invZ * invZ);

      Mat3 gR = 2.0 * g_sigma * R * M;
      const Mat3 gM = R.transpose() * g_sigma * R;
      grads.s[i].x() += 2.0 * g.s.x() * gM(0, 0);
      grads.s[i].y() += 2.0 * g.s.y() * gM(1, 1);
      gR.col(2) += g_n;
      g_n = Vec3::Zero();  // consumed

      Mat3 dR[4];
      quat_rotation_partials(qh, dR);
      Eigen::Vector4d g_qh;
      for (int a = 0; a < 4; ++a) g_qh[a] = (gR.array() * dR[a].array()).sum();
      grads.q[i] += (g_qh - qh * qh.dot(g_qh)) / qn;
    } else if (!g_n.isZero(0.0)) {
      // normal gradient without any covariance gradient
      const double qn = g.q.norm();
      const Eigen::Vector4d qh(g.q.w() / qn, g.q.x() / qn, g.q.y() / qn, g.q.z() / qn);
      Mat3 gR = Mat3::Zero();
      gR.col(2) = g_n;
      Mat3 dR[4];
      quat_rotation_partials(qh, dR);
      Eigen::Vector4d g_qh;
      for (int a = 0; a < 4; ++a) g_qh[a] = (gR.array() * dR[a].array()).sum();
      grads.q[i] += (g_qh - qh * qh.dot(g_qh)) / qn;
    }

    grads.x[i] += cam.R_wc.transpose() * g_t;
  }
  return grads;
}

void SurfelOptimizer::resize(size_t n_surfels) {
  m_.resize(n_surfels * kParamsPerSurfel, 0.0);
  v_.resize(n_surfels * kParamsPerSurfel, 0.0);
}

void SurfelOptimizer::apply_remap(const std::vector<int>& remap) {
  const size_t n_old = remap.size();
  size_t n_new = 0;
  for (int r : remap)
    if (r >= 0) ++n_new;
  std::vector<double> m2(n_new * kParamsPerSurfel, 0.0), v2(n_new * kParamsPerSurfel, 0.0);
  for (size_t i = 0; i < n_old; ++i) {
    if (remap[i] < 0) continue;
    for (int p = 0; p < kParamsPerSurfel; ++p) {
      m2[remap[i] * kParamsPerSurfel + p] = m_[i * kParamsPerSurfel + p];
      v2[remap[i] * kParamsPerSurfel + p] = v_[i * kParamsPerSurfel + p];
    }
  }
  m_.swap(m2);
  v_.swap(v2);
}

void SurfelOptimizer::step(SplatMap& map, const SurfelGradients& grads, const TrainConfig& cfg) {
  const size_t n = map.size();
  if (m_.size() != n * kParamsPerSurfel) resize(n);
  if (n == 0) return;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));

  auto adam = [&](size_t idx, double grad, double lr, double& value) {
    grad = std::clamp(grad, -cfg.grad_clip, cfg.grad_clip);
    double& m = m_[idx];
    double& v = v_[idx];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
    value -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
  };

  for (size_t i = 0; i < n; ++i) {
    Surfel& g = map.surfels()[i];
    const size_t base = i * kParamsPerSurfel;
    for (int a = 0; a < 3; ++a) adam(base + a, grads.x[i][a], cfg.lr_x, g.x[a]);
    double qv[4] = {g.q.w(), g.q.x(), g.q.y(), g.q.z()};
    for (int a = 0; a < 4; ++a) adam(base + 3 + a, grads.q[i][a], cfg.lr_q, qv[a]);
    g.q = Quat(qv[0], qv[1], qv[2], qv[3]);
    for (int a = 0; a < 2; ++a) adam(base + 7 + a, grads.s[i][a], cfg.lr_s, g.s[a]);
    for (int a = 0; a < 3; ++a) adam(base + 9 + a, grads.c[i][a], cfg.lr_c, g.c[a]);
    adam(base + 12, grads.o[i], cfg.lr_o, g.o);

    // constraints
    const double qn = g.q.norm();
    if (qn < 1e-12) g.q = Quat(1.0, 0.0, 0.0, 0.0);
    else g.q = Quat(g.q.w() / qn, g.q.x() / qn, g.q.y() / qn, g.q.z() / qn);
    g.o = std::clamp(g.o, cfg.opacity_min, 1.0 - cfg.opacity_min);
    g.s.x() = std::clamp(g.s.x(), cfg.scale_min, cfg.scale_max);
    g.s.y() = std::clamp(g.s.y(), cfg.scale_min, cfg.scale_max);
    g.c = g.c.cwiseMax(0.0).cwiseMin(1.0);
  }
}

std::vector<LossParts> train_step(SplatMap& map, SurfelOptimizer& opt,
                                  const std::vector<RgbdFrame>& frame_history,
                                  const CameraIntrinsics& intr, const TrainConfig& cfg,
                                  Rng& rng) {
  if (frame_history.empty()) throw std::invalid_argument("train_step: empty frame history");
  std::vector<LossParts> trace;
  trace.reserve(cfg.iterations_per_step);

  const int n_frames = static_cast<int>(frame_history.size());
  for (int iter = 0; iter < cfg.iterations_per_step; ++iter) {
    // batch: most recent frames plus random distinct earlier frames
    std::vector<int> batch;
    const int n_recent = std::min(cfg.recent_frames, n_frames);
    for (int i = 0; i < n_recent; ++i) batch.push_back(n_frames - 1 - i);
    const int pool = n_frames - n_recent;
    if (pool > 0 && cfg.random_frames > 0) {
      std::vector<int> candidates(pool);
      for (int i = 0; i < pool; ++i) candidates[i] = i;
      const int take = std::min(cfg.random_frames, pool);
      for (int i = 0; i < take; ++i) {
        const int j = i + static_cast<int>(rng.uniform_index(pool - i));
        std::swap(candidates[i], candidates[j]);
        batch.push_back(candidates[i]);
      }
    }

    SurfelGradients accum;
    accum.resize_zero(map.size());
    LossParts mean_loss;
    for (int fi : batch) {
      LossParts parts;
      const SurfelGradients g = gradients(map, frame_history[fi], frame_history[fi].pose, intr,
                                          cfg.weights, &parts);
      accum.add_scaled(g, 1.0 / batch.size());
      mean_loss.total += parts.total / batch.size();
      mean_loss.color += parts.color / batch.size();
      mean_loss.depth += parts.depth / batch.size();
      mean_loss.normal += parts.normal / batch.size();
    }
    opt.step(map, accum, cfg);
    trace.push_back(mean_loss);
  }
  return trace;
}

}  // namespace asr
