// SO(3)/SE(3) group and algebra operations.
//
// Conventions used throughout the project:
//  - Twist layout is [rho; phi]: translational part first, rotational second.
//  - Pose updates are left-multiplicative, T <- exp(xi) * T. Every analytic
//    pose Jacobian in the rasterizer assumes this perturbation.
//  - Rotations are stored as unit quaternions and renormalized after every
//    composition to keep drift out of long optimizations.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>

#include "gscalib/errors.hpp"

namespace gscalib {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat34 = Eigen::Matrix<double, 3, 4>;

/// 6D tangent vector of SE(3): [rho (m); phi (rad)].
using Twist = Vec6;

/// Skew-symmetric matrix, hat(v) * w == v x w.
inline Mat3 hat(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<     0.0, -v.z(),  v.y(),
         v.z(),    0.0, -v.x(),
        -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

namespace detail {
// Angle below which sin/cos ratios switch to their Taylor expansions.
constexpr double kSmallAngle = 1e-6;
}  // namespace detail

/// Rotation represented as a unit quaternion (w, x, y, z).
class Rotation {
 public:
  Rotation() : q_(Eigen::Quaterniond::Identity()) {}

  static Rotation identity() { return Rotation(); }

  /// Builds from quaternion components; normalizes.
  static Rotation from_quaternion(double w, double x, double y, double z) {
    Rotation r;
    r.q_ = Eigen::Quaterniond(w, x, y, z).normalized();
    return r;
  }

  static Rotation from_quaternion(const Eigen::Quaterniond& q) {
    Rotation r;
    r.q_ = q.normalized();
    return r;
  }

  static Rotation from_matrix(const Mat3& m) {
    Rotation r;
    r.q_ = Eigen::Quaterniond(m).normalized();
    return r;
  }

  /// Rodrigues exponential of a rotation vector phi (angle = |phi|).
  static Rotation exp(const Vec3& phi) {
    const double theta = phi.norm();
    Rotation r;
    if (theta < detail::kSmallAngle) {
      // q = [cos(t/2); sin(t/2)/t * phi], series in t
      const double t2 = theta * theta;
      const double w = 1.0 - t2 / 8.0 + t2 * t2 / 384.0;
      const double k = 0.5 - t2 / 48.0 + t2 * t2 / 3840.0;
      r.q_ = Eigen::Quaterniond(w, k * phi.x(), k * phi.y(), k * phi.z()).normalized();
    } else {
      r.q_ = Eigen::Quaterniond(Eigen::AngleAxisd(theta, phi / theta));
    }
    return r;
  }

  /// Rotation vector with |result| = angle in [0, pi].
  Vec3 log() const {
    Eigen::Quaterniond q = q_;
    if (q.w() < 0.0) q.coeffs() *= -1.0;
    const double vn = q.vec().norm();
    const double theta = 2.0 * std::atan2(vn, q.w());
    if (vn < detail::kSmallAngle) {
      // phi = 2 * v / w * (1 - |v|^2 / (3 w^2)), series about v = 0
      const double w = q.w();
      return q.vec() * (2.0 / w) * (1.0 - vn * vn / (3.0 * w * w));
    }
    return q.vec() * (theta / vn);
  }

  Mat3 matrix() const { return q_.toRotationMatrix(); }
  const Eigen::Quaterniond& quaternion() const { return q_; }

  double angle() const {
    Eigen::Quaterniond q = q_;
    if (q.w() < 0.0) q.coeffs() *= -1.0;
    return 2.0 * std::atan2(q.vec().norm(), q.w());
  }

  Rotation inverse() const {
    Rotation r;
    r.q_ = q_.conjugate();
    return r;
  }

  Rotation operator*(const Rotation& rhs) const {
    Rotation r;
    r.q_ = (q_ * rhs.q_).normalized();
    return r;
  }

  Vec3 operator*(const Vec3& v) const { return q_ * v; }

 private:
  Eigen::Quaterniond q_;
};

/// Rigid transform x -> R x + t.
struct Pose {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  Pose() = default;
  Pose(const Rotation& r, const Vec3& t) : rotation(r), translation(t) {}

  static Pose identity() { return Pose(); }

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }

  Pose compose(const Pose& rhs) const {
    return Pose(rotation * rhs.rotation, rotation * rhs.translation + translation);
  }

  Pose inverse() const {
    const Rotation rinv = rotation.inverse();
    return Pose(rinv, -(rinv * translation));
  }

  Mat34 matrix3x4() const {
    Mat34 m;
    m.leftCols<3>() = rotation.matrix();
    m.col(3) = translation;
    return m;
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topRows<3>() = matrix3x4();
    return m;
  }

  /// Camera center for a world-to-camera pose: the point mapped to the origin.
  Vec3 center() const { return -(rotation.inverse() * translation); }
};

inline Pose operator*(const Pose& a, const Pose& b) { return a.compose(b); }

inline Vec3 apply_pose(const Pose& p, const Vec3& x) { return p.apply(x); }

namespace detail {

/// V(phi) such that the SE(3) exponential has translation V(phi) * rho.
inline Mat3 se3_v(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 px = hat(phi);
  double a, b;  // V = I + a*px + b*px^2
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    a = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
    b = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
  } else {
    a = (1.0 - std::cos(theta)) / (theta * theta);
    b = (theta - std::sin(theta)) / (theta * theta * theta);
  }
  return Mat3::Identity() + a * px + b * px * px;
}

inline Mat3 se3_v_inverse(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 px = hat(phi);
  double c;  // V^-1 = I - px/2 + c*px^2
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  } else {
    c = 1.0 / (theta * theta) -
        (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Mat3::Identity() - 0.5 * px + c * px * px;
}

}  // namespace detail

/// SE(3) exponential map. Total function; rotation angle equals |phi|.
inline Pose exp(const Twist& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  return Pose(Rotation::exp(phi), detail::se3_v(phi) * rho);
}

/// SE(3) logarithm. Throws AngleNearPi when the rotation angle is within
/// 1e-3 of pi, where the axis is numerically unstable.
inline Twist log(const Pose& p) {
  if (p.rotation.angle() >= M_PI - 1e-3) {
    throw AngleNearPi();
  }
  const Vec3 phi = p.rotation.log();
  Twist xi;
  xi.head<3>() = detail::se3_v_inverse(phi) * p.translation;
  xi.tail<3>() = phi;
  return xi;
}

/// One line of 12 whitespace-separated numbers, row-major 3x4 [R|t]
/// (KITTI odometry convention).
inline std::string pose_to_line(const Pose& p) {
  const Mat34 m = p.matrix3x4();
  std::ostringstream os;
  os << std::setprecision(17);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      if (r != 0 || c != 0) os << ' ';
      os << m(r, c);
    }
  }
  return os.str();
}

inline Pose pose_from_line(const std::string& line) {
  std::istringstream is(line);
  Mat34 m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      if (!(is >> m(r, c))) {
        throw Error("pose line needs 12 numbers, got: \"" + line + "\"");
      }
    }
  }
  return Pose(Rotation::from_matrix(m.leftCols<3>()), m.col(3));
}

}  // namespace gscalib
