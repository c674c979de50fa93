#pragma once

#include "gscalib/lie.hpp"

namespace gscalib {

/// Pinhole intrinsics. Pixel (x, y) samples the image plane at exactly
/// (x, y); the principal point is expressed in the same grid.
struct PinholeCamera {
  double fx = 0.0, fy = 0.0;  // focal lengths, px
  double cx = 0.0, cy = 0.0;  // principal point, px
  int width = 0, height = 0;  // px
  double near = 0.1, far = 1e4;  // clip planes, m

  Vec2 project(const Vec3& p_cam) const {
    return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
  }

  /// Unit ray direction (camera frame) through pixel (u, v).
  Vec3 ray(double u, double v) const {
    return Vec3((u - cx) / fx, (v - cy) / fy, 1.0).normalized();
  }

  bool valid() const { return fx > 0.0 && fy > 0.0 && width > 0 && height > 0 && 0.0 < near && near < far; }
};

}  // namespace gscalib
