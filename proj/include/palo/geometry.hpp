/**
 * @file geometry.hpp
 * @brief Frame-tagged rigid transforms, rotation helpers, local plane fitting
 *        and point-to-plane distances.
 *
 * Quaternions are Hamilton convention throughout; rotation is stored as a
 * unit quaternion and converted to a matrix on demand. Pose composition and
 * point action check frame tags and throw FrameMismatch on incompatibility.
 */
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <vector>

#include "palo/errors.hpp"
#include "palo/frames.hpp"

namespace palo {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// 3D point tagged with the frame its coordinates live in.
struct Point3 {
  Vec3 coords{Vec3::Zero()};
  FrameId frame{FrameId::lidar_world()};

  Point3() = default;
  Point3(const Vec3& c, FrameId f) : coords(c), frame(f) {}
};

/// Skew-symmetric cross-product matrix: skew(v) * w == v x w.
inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return m;
}

/// Quaternion for a small rotation vector (first-order exp map is not used;
/// this is the exact axis-angle conversion, safe for any magnitude).
Quat quat_exp(const Vec3& theta);

/// Rotation vector of a unit quaternion (inverse of quat_exp).
Vec3 quat_log(const Quat& q);

/// Right Jacobian of SO(3): exp(theta + d) = exp(theta) * exp(Jr(theta) d).
Mat3 so3_right_jacobian(const Vec3& theta);

/// Angle in radians between two rotations.
double rotation_angle(const Quat& a, const Quat& b);

/// Yaw-only rotation about +z.
inline Quat yaw_quat(double yaw) { return Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())); }

/// Wrap an angle to (-pi, pi].
double wrap_angle(double a);

/// ZYX (yaw, pitch, roll) decomposition: q == Rz(yaw) Ry(pitch) Rx(roll).
void euler_zyx(const Quat& q, double* yaw, double* pitch, double* roll);

/// Rigid transform mapping coordinates in frame `from` to frame `to`.
struct Pose {
  Quat rotation{Quat::Identity()};
  Vec3 translation{Vec3::Zero()};
  FrameId from{FrameId::lidar_world()};
  FrameId to{FrameId::lidar_world()};

  Pose() = default;
  Pose(const Quat& q, const Vec3& t, FrameId from_, FrameId to_)
      : rotation(q.normalized()), translation(t), from(from_), to(to_) {}

  static Pose identity(FrameId f) { return Pose(Quat::Identity(), Vec3::Zero(), f, f); }

  Mat3 rot_matrix() const { return rotation.toRotationMatrix(); }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 3>(0, 0) = rot_matrix();
    m.block<3, 1>(0, 3) = translation;
    return m;
  }

  /// a.compose(b) maps b.from -> a.to; requires a.from == b.to.
  Pose compose(const Pose& other) const;

  Pose inverse() const;

  /// Map a point from `from` into `to`, re-tagging its frame.
  Point3 act(const Point3& p) const;

  /// Untagged action on raw coordinates (no frame check).
  Vec3 act(const Vec3& p) const { return rotation * p + translation; }
};

/// Infinite plane in Hesse normal form: normal . x + d = 0.
struct PlaneHN {
  Vec3 normal{Vec3::UnitZ()};
  double d{0.0};         ///< signed offset, meters
  double fit_rms{0.0};   ///< RMS of |normal . x_i + d| over fitting points
  bool valid{false};     ///< every fitting point within plane_fit_threshold
  bool eigen_path{false};  ///< true when the QR parameterization degenerated
                           ///< (plane near the origin) and the centroid+eigen
                           ///< refit produced the result
};

/// Least-squares plane through >= 3 points, solved as the overdetermined
/// system [x_i y_i z_i] m = -1 by Householder QR and converted to Hesse
/// form (unit normal plus signed offset). Sign is normalized so d <= 0.
/// When |m| blows up (plane passing near the origin makes the -1
/// normalization singular) the fit falls back to the centroid +
/// smallest-covariance-eigenvector plane and flags eigen_path.
///
/// Throws DegenerateGeometry for rank-deficient (collinear) inputs and
/// FrameMismatch when the points do not share a frame.
PlaneHN fit_plane(const std::vector<Point3>& points, double plane_fit_threshold = 0.10);

/// Same fit over raw coordinates (no frame bookkeeping); used by hot paths.
PlaneHN fit_plane_raw(const std::vector<Vec3>& points, double plane_fit_threshold = 0.10);

/// |normal . p + d|, non-negative point-to-plane distance.
inline double point_to_plane_distance(const Vec3& p, const PlaneHN& plane) {
  return std::abs(plane.normal.dot(p) + plane.d);
}
inline double point_to_plane_distance(const Point3& p, const PlaneHN& plane) {
  return point_to_plane_distance(p.coords, plane);
}

/// Signed variant, normal . p + d; the residual form used by the backend.
inline double point_to_plane_signed(const Vec3& p, const PlaneHN& plane) {
  return plane.normal.dot(p) + plane.d;
}

/// Plane after applying a rigid transform to all of its points.
PlaneHN transform_plane(const Pose& pose, const PlaneHN& plane);

}  // namespace palo
