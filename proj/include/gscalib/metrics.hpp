// Calibration and view-synthesis metrics: geodesic rotation error,
// translation error in the LiDAR frame, PSNR/SSIM, and the LiDAR-to-image
// projection overlay.

#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gscalib/errors.hpp"
#include "gscalib/image.hpp"
#include "gscalib/losses.hpp"
#include "gscalib/rig.hpp"
#include "gscalib/scene.hpp"

namespace gscalib {

/// Rotation error in degrees (geodesic angle) and translation error in
/// meters. Translation is compared in the LiDAR frame, i.e. between the
/// camera centers of the two LiDAR-to-camera transforms.
inline std::pair<double, double> pose_error_pair(const Pose& estimated, const Pose& reference) {
  const Mat3 rel = estimated.rotation.matrix().transpose() * reference.rotation.matrix();
  const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double rot_deg = std::acos(c) * 180.0 / M_PI;
  const double trans = (estimated.center() - reference.center()).norm();
  return {rot_deg, trans};
}

struct CameraPoseError {
  std::string name;
  double rot_deg = 0.0;
  double trans_m = 0.0;
};

struct CalibMetrics {
  std::vector<CameraPoseError> per_camera;
  double mean_rot_deg = 0.0;
  double mean_trans_m = 0.0;
};

inline CalibMetrics pose_errors(const CameraRig& estimated, const CameraRig& reference) {
  if (estimated.cameras.size() != reference.cameras.size())
    throw NameMismatch("rigs have different camera counts");
  CalibMetrics m;
  for (const auto& cam : estimated.cameras) {
    const RigCamera* ref = reference.find(cam.name);
    if (!ref) throw NameMismatch("reference rig lacks camera '" + cam.name + "'");
    const auto [rot, trans] = pose_error_pair(cam.t_lc, ref->t_lc);
    m.per_camera.push_back({cam.name, rot, trans});
    m.mean_rot_deg += rot;
    m.mean_trans_m += trans;
  }
  m.mean_rot_deg /= static_cast<double>(m.per_camera.size());
  m.mean_trans_m /= static_cast<double>(m.per_camera.size());
  return m;
}

struct ImageMetrics {
  double psnr = 0.0;  // dB; +inf for identical images
  double ssim = 0.0;
};

inline ImageMetrics image_metrics(const Image& rendered, const Image& observed) {
  require_same_shape(rendered, observed);
  double mse = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const double d = rendered.data()[i] - observed.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(rendered.size());
  ImageMetrics m;
  m.psnr = mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
  m.ssim = ssim(rendered, observed);
  return m;
}

/// Depth colormap, near = red, far = blue; piecewise-linear through the
/// stops documented in docs/formats.md. t in [0, 1].
inline Vec3 depth_color(double t) {
  static const Vec3 stops[7] = {{1.0, 0.0, 0.0}, {1.0, 0.65, 0.0}, {1.0, 1.0, 0.0},
                                {0.0, 1.0, 0.0}, {0.0, 1.0, 1.0},  {0.0, 0.35, 1.0},
                                {0.0, 0.0, 1.0}};
  t = std::clamp(t, 0.0, 1.0) * 6.0;
  const int k = std::min(5, static_cast<int>(t));
  const double f = t - k;
  return stops[k] * (1.0 - f) + stops[k + 1] * f;
}

struct ProjectedPoint {
  int point_index = 0;
  double u = 0.0, v = 0.0;  // px
  double depth = 0.0;       // camera-frame z, m
};

struct ProjectionOverlay {
  Image overlay;
  std::vector<ProjectedPoint> points;
  std::size_t skipped = 0;  // behind the camera or out of frame
};

/// Projects every cloud point into the named camera and paints a
/// depth-colored overlay on the given image.
inline ProjectionOverlay project_points(const PointCloud& cloud, const CameraRig& rig,
                                        const std::string& camera_name, const Image& base) {
  if (cloud.empty()) throw EmptyInput("project_points: empty cloud");
  const RigCamera& cam = rig.at(camera_name);
  ProjectionOverlay out;
  out.overlay = base;

  for (int i = 0; i < static_cast<int>(cloud.points.size()); ++i) {
    const Vec3 pc = cam.t_lc.apply(cloud.points[static_cast<std::size_t>(i)]);
    if (pc.z() <= cam.intrinsics.near) {
      ++out.skipped;
      continue;
    }
    const Vec2 px = cam.intrinsics.project(pc);
    const int x = static_cast<int>(std::lround(px.x()));
    const int y = static_cast<int>(std::lround(px.y()));
    if (x < 0 || x >= cam.intrinsics.width || y < 0 || y >= cam.intrinsics.height) {
      ++out.skipped;
      continue;
    }
    out.points.push_back({i, px.x(), px.y(), pc.z()});
  }

  double dmin = std::numeric_limits<double>::max(), dmax = 0.0;
  for (const auto& p : out.points) {
    dmin = std::min(dmin, p.depth);
    dmax = std::max(dmax, p.depth);
  }
  const double span = dmax > dmin ? dmax - dmin : 1.0;
  for (const auto& p : out.points) {
    const Vec3 c = depth_color((p.depth - dmin) / span);
    const int x = static_cast<int>(std::lround(p.u));
    const int y = static_cast<int>(std::lround(p.v));
    for (int ch = 0; ch < 3; ++ch) out.overlay.at(y, x, ch) = c(ch);
  }
  return out;
}

}  // namespace gscalib
