// Tile-based forward splatting of 3D Gaussians and the full analytic
// backward pass, including the camera-pose gradient expressed as a twist
// for the left-multiplicative update T <- exp(-lambda * g) * T.
//
// The forward blend at pixel u is
//   C(u) = sum_i c_i a_i prod_{j<i} (1 - a_j),  a_i = alpha_i * G2d_i(u),
// with splats sorted front to back by camera-frame depth of the center.
// A Gaussian's support is cut hard at `support_sigma` Mahalanobis units,
// which is what makes the tiled and the brute-force renderer agree exactly.

#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <thread>
#include <vector>

#include "gscalib/camera.hpp"
#include "gscalib/errors.hpp"
#include "gscalib/image.hpp"
#include "gscalib/lie.hpp"
#include "gscalib/scene.hpp"

namespace gscalib {

/// Image-plane footprint of one projected Gaussian.
struct Splat2D {
  Vec2 mean = Vec2::Zero();      // px
  Mat2 cov = Mat2::Identity();   // px^2, symmetric positive definite
  Vec3 color = Vec3::Zero();
  double alpha = 0.0;            // [0,1)
  double depth = 0.0;            // camera-frame z of the center, for sorting
  int gaussian_index = -1;       // index into the projected gaussian list
};

/// Everything the backward pass needs about one projected Gaussian.
struct SplatCache {
  Vec3 mu_cam = Vec3::Zero();
  Mat23 proj_jacobian = Mat23::Zero();  // J at mu_cam
  Mat23 jw = Mat23::Zero();             // A = J * R_c
  Mat3 sigma3d = Mat3::Zero();
  Mat3 rot = Mat3::Identity();          // gaussian rotation matrix
  Vec3 scale = Vec3::Ones();
  Mat2 cov_inv = Mat2::Identity();
};

struct RenderOptions {
  int tile_size = 16;
  // Hard Mahalanobis support radius; <= 0 disables the cutoff (gradient-check
  // mode, where the discontinuity would pollute finite differences).
  double support_sigma = 3.0;
  // Stop blending a pixel when transmittance drops below this; <= 0 disables.
  double early_exit_transmittance = 1e-4;
  // Cull margin around the image in units of the splat's largest sigma;
  // <= 0 culls on depth only.
  double cull_margin_sigma = 3.0;
  Vec3 background = Vec3::Zero();
  int workers = 1;
  bool keep_cache = true;
  double blur_floor = 0.3;  // px^2 added to the 2D covariance diagonal
};

namespace detail {

inline Mat3 quat_to_matrix(const Eigen::Quaterniond& q) { return q.toRotationMatrix(); }

inline Mat23 projection_jacobian(const PinholeCamera& cam, const Vec3& p) {
  const double z = p.z();
  Mat23 j;
  j << cam.fx / z, 0.0, -cam.fx * p.x() / (z * z),
       0.0, cam.fy / z, -cam.fy * p.y() / (z * z);
  return j;
}

}  // namespace detail

/// Projects one Gaussian; std::nullopt means culled (depth outside
/// (near, far) or center farther than cull_margin_sigma * sigma_max from
/// the image rectangle).
inline std::optional<Splat2D> project(const AuxGaussian& g, const Pose& cam_pose,
                                      const PinholeCamera& cam,
                                      const RenderOptions& opt = RenderOptions(),
                                      SplatCache* cache = nullptr) {
  const Vec3 mu_cam = cam_pose.apply(g.center);
  if (!(mu_cam.z() > cam.near && mu_cam.z() < cam.far)) return std::nullopt;

  const Mat3 w = cam_pose.rotation.matrix();
  const Mat3 rot = detail::quat_to_matrix(g.rotation);
  const Mat3 m = rot * g.scale.asDiagonal();
  const Mat3 sigma3d = m * m.transpose();
  const Mat23 j = detail::projection_jacobian(cam, mu_cam);
  const Mat23 a = j * w;
  Mat2 cov = a * sigma3d * a.transpose();
  cov(0, 0) += opt.blur_floor;
  cov(1, 1) += opt.blur_floor;

  Splat2D s;
  s.mean = cam.project(mu_cam);
  s.cov = cov;
  s.color = g.color;
  s.alpha = g.opacity;
  s.depth = mu_cam.z();

  if (opt.cull_margin_sigma > 0.0) {
    // largest eigenvalue of a symmetric 2x2
    const double tr = cov.trace();
    const double det = cov.determinant();
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    const double lam_max = tr / 2.0 + disc;
    const double margin = opt.cull_margin_sigma * std::sqrt(lam_max);
    if (s.mean.x() < -margin || s.mean.x() > cam.width - 1 + margin ||
        s.mean.y() < -margin || s.mean.y() > cam.height - 1 + margin) {
      return std::nullopt;
    }
  }

  if (cache) {
    cache->mu_cam = mu_cam;
    cache->proj_jacobian = j;
    cache->jw = a;
    cache->sigma3d = sigma3d;
    cache->rot = rot;
    cache->scale = g.scale;
    cache->cov_inv = cov.inverse();
  }
  return s;
}

/// Projected view of a whole Gaussian list, retaining caches for backward.
struct SceneProjection {
  std::vector<Splat2D> splats;
  std::vector<SplatCache> caches;             // parallel to splats
  std::vector<int> visible_gaussians;         // gaussian_index per splat
  int gaussian_count = 0;
};

inline SceneProjection project_scene(const std::vector<AuxGaussian>& gaussians,
                                     const Pose& cam_pose, const PinholeCamera& cam,
                                     const RenderOptions& opt = RenderOptions()) {
  SceneProjection view;
  view.gaussian_count = static_cast<int>(gaussians.size());
  view.splats.reserve(gaussians.size());
  view.caches.reserve(gaussians.size());
  for (int i = 0; i < static_cast<int>(gaussians.size()); ++i) {
    SplatCache cache;
    auto s = project(gaussians[static_cast<std::size_t>(i)], cam_pose, cam, opt, &cache);
    if (!s) continue;
    s->gaussian_index = i;
    view.splats.push_back(*s);
    view.caches.push_back(cache);
    view.visible_gaussians.push_back(i);
  }
  return view;
}

/// Rendered image plus the state needed to run the backward pass.
struct RenderPacket {
  Image color;
  std::vector<double> transmittance;       // per pixel, final T in (0,1]
  std::vector<std::uint32_t> contributors; // per pixel, splats actually blended

  // cache for backward
  bool has_cache = false;
  std::vector<Splat2D> splats;             // input order
  std::vector<int> order;                  // depth-sorted splat indices
  std::vector<std::vector<int>> tile_bins; // per tile, positions into `order`
  std::vector<std::uint32_t> considered;   // per pixel, bin entries walked
  RenderOptions options;
  PinholeCamera camera;
  int tiles_x = 0, tiles_y = 0;
};

namespace detail {

struct TileRange {
  int x0, x1, y0, y1;  // tile index ranges, half open
};

inline void splat_pixel_bbox(const Splat2D& s, double support, int width, int height,
                             int& px0, int& px1, int& py0, int& py1) {
  if (support <= 0.0) {
    px0 = 0; px1 = width; py0 = 0; py1 = height;
    return;
  }
  // exact axis-aligned bounds of the support ellipse
  const double rx = support * std::sqrt(std::max(0.0, s.cov(0, 0)));
  const double ry = support * std::sqrt(std::max(0.0, s.cov(1, 1)));
  px0 = std::max(0, static_cast<int>(std::ceil(s.mean.x() - rx)));
  px1 = std::min(width, static_cast<int>(std::floor(s.mean.x() + rx)) + 1);
  py0 = std::max(0, static_cast<int>(std::ceil(s.mean.y() - ry)));
  py1 = std::min(height, static_cast<int>(std::floor(s.mean.y() + ry)) + 1);
}

/// Runs fn(worker_index, begin, end) over [0, n) on opt.workers threads with
/// a static partition, so results never depend on scheduling.
template <typename Fn>
inline void parallel_ranges(int n, int workers, Fn&& fn) {
  workers = std::max(1, std::min(workers, n > 0 ? n : 1));
  if (workers == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(workers));
  const int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int b = w * chunk;
    const int e = std::min(n, b + chunk);
    threads.emplace_back([&fn, w, b, e]() { fn(w, b, e); });
  }
  for (auto& t : threads) t.join();
}

}  // namespace detail

/// Front-to-back alpha blending over 16x16 tiles. Splats are sorted by
/// depth ascending with ties broken by input index, so the result is
/// bit-identical across runs and worker counts.
inline RenderPacket render(const std::vector<Splat2D>& splats, const PinholeCamera& cam,
                           const RenderOptions& opt = RenderOptions()) {
  const int width = cam.width, height = cam.height;
  RenderPacket packet;
  packet.color = Image(height, width);
  packet.transmittance.assign(static_cast<std::size_t>(width) * height, 1.0);
  packet.contributors.assign(static_cast<std::size_t>(width) * height, 0);
  packet.options = opt;
  packet.camera = cam;

  std::vector<int> order(splats.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (splats[static_cast<std::size_t>(a)].depth != splats[static_cast<std::size_t>(b)].depth)
      return splats[static_cast<std::size_t>(a)].depth < splats[static_cast<std::size_t>(b)].depth;
    return a < b;
  });

  const int ts = opt.tile_size;
  const int tiles_x = (width + ts - 1) / ts;
  const int tiles_y = (height + ts - 1) / ts;
  std::vector<std::vector<int>> bins(static_cast<std::size_t>(tiles_x) * tiles_y);
  for (int pos = 0; pos < static_cast<int>(order.size()); ++pos) {
    const Splat2D& s = splats[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])];
    int px0, px1, py0, py1;
    detail::splat_pixel_bbox(s, opt.support_sigma, width, height, px0, px1, py0, py1);
    if (px0 >= px1 || py0 >= py1) continue;
    for (int ty = py0 / ts; ty <= (py1 - 1) / ts; ++ty)
      for (int tx = px0 / ts; tx <= (px1 - 1) / ts; ++tx)
        bins[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(pos);
  }

  std::vector<std::uint32_t> considered(static_cast<std::size_t>(width) * height, 0);
  const double support2 =
      opt.support_sigma > 0.0 ? opt.support_sigma * opt.support_sigma : 0.0;

  const int n_tiles = tiles_x * tiles_y;
  detail::parallel_ranges(n_tiles, opt.workers, [&](int, int tile_begin, int tile_end) {
    for (int tile = tile_begin; tile < tile_end; ++tile) {
      const auto& bin = bins[static_cast<std::size_t>(tile)];
      const int tx = tile % tiles_x, ty = tile / tiles_x;
      const int x0 = tx * ts, x1 = std::min(width, x0 + ts);
      const int y0 = ty * ts, y1 = std::min(height, y0 + ts);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          double t = 1.0;
          Vec3 c = Vec3::Zero();
          std::uint32_t contrib = 0;
          std::uint32_t walked = 0;
          for (int pos : bin) {
            ++walked;
            const Splat2D& s = splats[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])];
            const Vec2 d(x - s.mean.x(), y - s.mean.y());
            const Mat2 m = s.cov.inverse();
            const double q = d.dot(m * d);
            if (support2 > 0.0 && q > support2) continue;
            const double g = std::exp(-0.5 * q);
            const double a = s.alpha * g;
            if (a <= 0.0) continue;
            c += s.color * (a * t);
            t *= (1.0 - a);
            ++contrib;
            if (opt.early_exit_transmittance > 0.0 && t < opt.early_exit_transmittance) break;
          }
          c += opt.background * t;
          const std::size_t px = static_cast<std::size_t>(y) * width + x;
          packet.color.at(y, x, 0) = c.x();
          packet.color.at(y, x, 1) = c.y();
          packet.color.at(y, x, 2) = c.z();
          packet.transmittance[px] = t;
          packet.contributors[px] = contrib;
          considered[px] = walked;
        }
      }
    }
  });

  if (opt.keep_cache) {
    packet.has_cache = true;
    packet.splats = splats;
    packet.order = std::move(order);
    packet.tile_bins = std::move(bins);
    packet.considered = std::move(considered);
    packet.tiles_x = tiles_x;
    packet.tiles_y = tiles_y;
  }
  return packet;
}

/// Gradients on every Splat2D attribute. d_cov follows the full-matrix
/// convention (all four entries treated as independent; the result is
/// symmetric), so a finite-difference probe that perturbs the two
/// off-diagonal entries together should see 2 * d_cov(0,1).
struct SplatGrads {
  std::vector<Vec2> d_mean;
  std::vector<Mat2> d_cov;
  std::vector<Vec3> d_color;
  std::vector<double> d_alpha;

  explicit SplatGrads(std::size_t n = 0)
      : d_mean(n, Vec2::Zero()), d_cov(n, Mat2::Zero()), d_color(n, Vec3::Zero()),
        d_alpha(n, 0.0) {}
};

/// Exact reverse of the forward blend, including the transmittance chain
/// and the background term.
inline SplatGrads render_backward(const RenderPacket& packet, const Image& d_image) {
  if (!packet.has_cache) throw MissingCache("render_backward: render with keep_cache");
  require_same_shape(packet.color, d_image);
  const auto& splats = packet.splats;
  const auto& order = packet.order;
  const RenderOptions& opt = packet.options;
  const int width = packet.camera.width, height = packet.camera.height;
  const int ts = opt.tile_size;
  const double support2 =
      opt.support_sigma > 0.0 ? opt.support_sigma * opt.support_sigma : 0.0;

  const int n_tiles = packet.tiles_x * packet.tiles_y;
  const int workers = std::max(1, opt.workers);
  std::vector<SplatGrads> partial(static_cast<std::size_t>(workers), SplatGrads(splats.size()));

  struct Entry {
    int splat;
    double g, a, t;  // gaussian value, alpha*g, transmittance before blend
    Vec2 md;         // cov^-1 * d
  };

  detail::parallel_ranges(n_tiles, workers, [&](int worker, int tile_begin, int tile_end) {
    SplatGrads& grads = partial[static_cast<std::size_t>(worker)];
    std::vector<Entry> stack;
    for (int tile = tile_begin; tile < tile_end; ++tile) {
      const auto& bin = packet.tile_bins[static_cast<std::size_t>(tile)];
      if (bin.empty()) continue;
      const int tx = tile % packet.tiles_x, ty = tile / packet.tiles_x;
      const int x0 = tx * ts, x1 = std::min(width, x0 + ts);
      const int y0 = ty * ts, y1 = std::min(height, y0 + ts);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const std::size_t px = static_cast<std::size_t>(y) * width + x;
          const Vec3 dc(d_image.at(y, x, 0), d_image.at(y, x, 1), d_image.at(y, x, 2));
          if (dc.isZero(0.0) && true) {
            // still cheap to skip: zero upstream contributes nothing
            continue;
          }
          // replay the forward walk for this pixel
          stack.clear();
          double t = 1.0;
          const std::uint32_t walked = packet.considered[px];
          for (std::uint32_t w = 0; w < walked; ++w) {
            const int splat = order[static_cast<std::size_t>(bin[w])];
            const Splat2D& s = splats[static_cast<std::size_t>(splat)];
            const Vec2 d(x - s.mean.x(), y - s.mean.y());
            const Mat2 m = s.cov.inverse();
            const double q = d.dot(m * d);
            if (support2 > 0.0 && q > support2) continue;
            const double g = std::exp(-0.5 * q);
            const double a = s.alpha * g;
            if (a <= 0.0) continue;
            stack.push_back({splat, g, a, t, m * d});
            t *= (1.0 - a);
          }
          // suffix color sum S_i = sum_{k>i} c_k a_k t_k + bg * t_final
          Vec3 suffix = opt.background * t;
          for (int i = static_cast<int>(stack.size()) - 1; i >= 0; --i) {
            const Entry& e = stack[static_cast<std::size_t>(i)];
            const Splat2D& s = splats[static_cast<std::size_t>(e.splat)];
            const std::size_t si = static_cast<std::size_t>(e.splat);
            // color path
            grads.d_color[si] += dc * (e.a * e.t);
            // alpha path: dC/da_i = c_i t_i - S_i / (1 - a_i)
            const Vec3 dC_da = s.color * e.t - suffix / (1.0 - e.a);
            const double da = dc.dot(dC_da);
            grads.d_alpha[si] += da * e.g;
            const double dg = da * s.alpha;
            // G = exp(-q/2): dG/dmean = G * (M d), dG/dcov = G/2 * (M d)(M d)^T
            grads.d_mean[si] += dg * e.g * e.md;
            grads.d_cov[si] += (0.5 * dg * e.g) * (e.md * e.md.transpose());
            suffix += s.color * (e.a * e.t);
          }
        }
      }
    }
  });

  SplatGrads total(splats.size());
  for (const SplatGrads& p : partial) {
    for (std::size_t i = 0; i < splats.size(); ++i) {
      total.d_mean[i] += p.d_mean[i];
      total.d_cov[i] += p.d_cov[i];
      total.d_color[i] += p.d_color[i];
      total.d_alpha[i] += p.d_alpha[i];
    }
  }
  return total;
}

/// The three summands of the pose gradient, kept separate so tests can
/// check that every term is exercised.
struct PoseGradient {
  Twist mean_term = Twist::Zero();   // through the projected center
  Twist cov_term = Twist::Zero();    // through J and R_c in the 2D covariance
  Twist color_term = Twist::Zero();  // through the camera center (view-dependent
                                     // attributes of the decoder)

  Twist total() const { return mean_term + cov_term + color_term; }
};

/// Backward through projection: turns Splat2D gradients into gradients on
/// the input Gaussians plus the geometric part of the pose gradient.
struct ProjectionBackwardResult {
  GaussianGrads gaussians;
  PoseGradient pose;
};

namespace detail {

/// d(R(q)) / dq contracted with a matrix gradient: returns dL/dq given
/// dL/dR for a unit quaternion q = (w, x, y, z).
inline Eigen::Vector4d quat_backward(const Eigen::Quaterniond& q, const Mat3& d_rot) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Mat3 dw, dx, dy, dz;
  dw << 0, -2 * z, 2 * y,
        2 * z, 0, -2 * x,
        -2 * y, 2 * x, 0;
  dx << 0, 2 * y, 2 * z,
        2 * y, -4 * x, -2 * w,
        2 * z, 2 * w, -4 * x;
  dy << -4 * y, 2 * x, 2 * w,
        2 * x, 0, 2 * z,
        -2 * w, 2 * z, -4 * y;
  dz << -4 * z, -2 * w, 2 * x,
        2 * w, -4 * z, 2 * y,
        2 * x, 2 * y, 0;
  return {d_rot.cwiseProduct(dw).sum(), d_rot.cwiseProduct(dx).sum(),
          d_rot.cwiseProduct(dy).sum(), d_rot.cwiseProduct(dz).sum()};
}

}  // namespace detail

/// Chains Splat2D gradients back through the EWA projection. Produces the
/// per-Gaussian gradients (world center, rotation quaternion, scale, color,
/// opacity) and the two geometric pose-gradient terms.
inline ProjectionBackwardResult projection_backward(const SceneProjection& view,
                                                    const SplatGrads& grads,
                                                    const Pose& cam_pose,
                                                    const PinholeCamera& cam) {
  ProjectionBackwardResult out;
  out.gaussians = GaussianGrads::zeros(view.gaussian_count);
  const Mat3 w = cam_pose.rotation.matrix();

  for (std::size_t s = 0; s < view.splats.size(); ++s) {
    const SplatCache& cache = view.caches[s];
    const int gi = view.visible_gaussians[s];
    const Vec3 mu = cache.mu_cam;
    const double z = mu.z(), z2 = z * z, z3 = z2 * z;

    // ---- mean path: mu2d = project(mu_cam) --------------------------------
    const Vec2 d_mean2d = grads.d_mean[s];
    const Vec3 d_mu_mean = cache.proj_jacobian.transpose() * d_mean2d;

    // ---- covariance path: cov2d = A Sigma A^T + blur ----------------------
    const Mat2 g2 = grads.d_cov[s];
    const Mat23 a = cache.jw;
    const Mat23 d_a = (g2 + g2.transpose()) * a * cache.sigma3d;
    const Mat3 d_sigma3d = a.transpose() * g2 * a;
    const Mat23 d_j = d_a * w.transpose();
    const Mat3 d_w_cov = cache.proj_jacobian.transpose() * d_a;

    // J's own dependence on mu_cam
    Vec3 d_mu_cov = Vec3::Zero();
    d_mu_cov.x() += d_j(0, 2) * (-cam.fx / z2);
    d_mu_cov.y() += d_j(1, 2) * (-cam.fy / z2);
    d_mu_cov.z() += d_j(0, 0) * (-cam.fx / z2) + d_j(0, 2) * (2.0 * cam.fx * mu.x() / z3) +
                    d_j(1, 1) * (-cam.fy / z2) + d_j(1, 2) * (2.0 * cam.fy * mu.y() / z3);

    // ---- back to the 3D Gaussian ------------------------------------------
    // Sigma = M M^T, M = R S
    const Mat3 m = cache.rot * cache.scale.asDiagonal();
    const Mat3 d_m = (d_sigma3d + d_sigma3d.transpose()) * m;
    const Mat3 d_rot = d_m * cache.scale.asDiagonal();
    const Vec3 d_scale = (cache.rot.transpose() * d_m).diagonal();

    const Vec3 d_mu_total = d_mu_mean + d_mu_cov;
    out.gaussians.d_center.row(gi) += (w.transpose() * d_mu_total).transpose();
    // quaternion gradient needs the unit quaternion of the cached rotation
    const Eigen::Quaterniond q(cache.rot);
    out.gaussians.d_quat.row(gi) +=
        detail::quat_backward(q, d_rot).transpose();
    out.gaussians.d_scale.row(gi) += d_scale.transpose();
    out.gaussians.d_color.row(gi) += grads.d_color[s].transpose();
    out.gaussians.d_opacity(gi) += grads.d_alpha[s];

    // ---- pose terms (left perturbation, twist = [rho; phi]) ---------------
    // d mu_cam / d rho = I, d mu_cam / d phi = -[mu]x
    out.pose.mean_term.head<3>() += d_mu_mean;
    out.pose.mean_term.tail<3>() += mu.cross(d_mu_mean);
    out.pose.cov_term.head<3>() += d_mu_cov;
    out.pose.cov_term.tail<3>() += mu.cross(d_mu_cov);
    // rotation entries of the pose: dR/dphi_i = [e_i]x R
    for (int i = 0; i < 3; ++i) {
      const Mat3 gen = hat(Vec3::Unit(i)) * w;
      out.pose.cov_term(3 + i) += d_w_cov.cwiseProduct(gen).sum();
    }
  }
  return out;
}

/// Camera-center pose term: o_c = -R^T t, so under the left perturbation
/// d o_c / d rho = -R^T and d o_c / d phi = 0.
inline Twist camera_center_pose_term(const Pose& cam_pose, const Vec3& d_cam_center) {
  Twist g = Twist::Zero();
  g.head<3>() = -(cam_pose.rotation.matrix() * d_cam_center);
  return g;
}

/// Full pose gradient: the two geometric summands accumulated over all
/// visible splats plus the view-conditioning term through the camera
/// center (zero when the decoder's outputs do not depend on the view).
inline PoseGradient pose_backward(const SceneProjection& view, const SplatGrads& grads,
                                  const Pose& cam_pose, const PinholeCamera& cam,
                                  const Vec3& d_cam_center = Vec3::Zero()) {
  ProjectionBackwardResult r = projection_backward(view, grads, cam_pose, cam);
  r.pose.color_term = camera_center_pose_term(cam_pose, d_cam_center);
  return r.pose;
}

}  // namespace gscalib
