#include "palo/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace palo {

Quat quat_exp(const Vec3& theta) {
  const double angle = theta.norm();
  if (angle < 1e-12) {
    Quat q(1.0, 0.5 * theta.x(), 0.5 * theta.y(), 0.5 * theta.z());
    return q.normalized();
  }
  const Vec3 axis = theta / angle;
  return Quat(Eigen::AngleAxisd(angle, axis));
}

Vec3 quat_log(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double vn = q.vec().norm();
  if (vn < 1e-12) return 2.0 * q.vec();
  const double angle = 2.0 * std::atan2(vn, q.w());
  return (angle / vn) * q.vec();
}

double rotation_angle(const Quat& a, const Quat& b) {
  return quat_log(a.conjugate() * b).norm();
}

Mat3 so3_right_jacobian(const Vec3& theta) {
  const double angle = theta.norm();
  const Mat3 tx = skew(theta);
  if (angle < 1e-7) {
    return Mat3::Identity() - 0.5 * tx + (1.0 / 6.0) * tx * tx;
  }
  const double a2 = angle * angle;
  return Mat3::Identity() - ((1.0 - std::cos(angle)) / a2) * tx +
         ((angle - std::sin(angle)) / (a2 * angle)) * tx * tx;
}

void euler_zyx(const Quat& q, double* yaw, double* pitch, double* roll) {
  const Mat3 r = q.toRotationMatrix();
  *yaw = std::atan2(r(1, 0), r(0, 0));
  *pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  *roll = std::atan2(r(2, 1), r(2, 2));
}

double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a <= 0.0) a += 2.0 * M_PI;
  return a - M_PI;
}

Pose Pose::compose(const Pose& other) const {
  if (from != other.to) {
    throw FrameMismatch("compose " + from.str() + "->" + to.str() + " with " +
                        other.from.str() + "->" + other.to.str());
  }
  return Pose(rotation * other.rotation, rotation * other.translation + translation,
              other.from, to);
}

Pose Pose::inverse() const {
  const Quat qi = rotation.conjugate();
  return Pose(qi, qi * (-translation), to, from);
}

Point3 Pose::act(const Point3& p) const {
  if (p.frame != from) {
    throw FrameMismatch("act: point in " + p.frame.str() + ", pose maps " + from.str());
  }
  return Point3(rotation * p.coords + translation, to);
}

namespace {

PlaneHN finish_plane(const Vec3& normal_unit, double d, const std::vector<Vec3>& points,
                     double threshold, bool eigen_path) {
  PlaneHN plane;
  plane.normal = normal_unit;
  plane.d = d;
  // Sign convention: flip so the offset is non-positive.
  if (plane.d > 0.0) {
    plane.normal = -plane.normal;
    plane.d = -plane.d;
  }
  plane.eigen_path = eigen_path;
  double sum_sq = 0.0, max_abs = 0.0;
  for (const auto& p : points) {
    const double e = plane.normal.dot(p) + plane.d;
    sum_sq += e * e;
    max_abs = std::max(max_abs, std::abs(e));
  }
  plane.fit_rms = std::sqrt(sum_sq / static_cast<double>(points.size()));
  plane.valid = (max_abs <= threshold);
  return plane;
}

PlaneHN fit_eigen(const std::vector<Vec3>& points, double threshold) {
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 q = p - centroid;
    cov += q * q.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  // Two vanishing eigenvalues mean the points are (near) collinear.
  if (es.eigenvalues()(1) < 1e-12 * std::max(1.0, es.eigenvalues()(2))) {
    throw DegenerateGeometry("collinear points in plane fit");
  }
  const Vec3 n = es.eigenvectors().col(0);
  return finish_plane(n, -n.dot(centroid), points, threshold, true);
}

}  // namespace

PlaneHN fit_plane_raw(const std::vector<Vec3>& points, double plane_fit_threshold) {
  const int n = static_cast<int>(points.size());
  if (n < 3) throw DegenerateGeometry("plane fit needs >= 3 points");

  Eigen::MatrixXd a(n, 3);
  for (int i = 0; i < n; ++i) a.row(i) = points[i].transpose();

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  if (qr.rank() < 3) {
    // Rank 2 with -1 rhs can still be consistent (plane through the origin);
    // the eigen path both handles that and rejects true collinearity.
    return fit_eigen(points, plane_fit_threshold);
  }
  const Vec3 m = qr.solve(Eigen::VectorXd::Constant(n, -1.0));
  const double mn = m.norm();
  if (!(mn > 1e-6) || mn > 1e6) {
    // Plane close to the origin: the A/D normalization is singular there.
    return fit_eigen(points, plane_fit_threshold);
  }
  // n = m/|m| and the offset is the modular inverse 1/|m|:  n.x + 1/|m| = 0.
  return finish_plane(m / mn, 1.0 / mn, points, plane_fit_threshold, false);
}

PlaneHN fit_plane(const std::vector<Point3>& points, double plane_fit_threshold) {
  if (points.size() < 3) throw DegenerateGeometry("plane fit needs >= 3 points");
  std::vector<Vec3> raw;
  raw.reserve(points.size());
  for (const auto& p : points) {
    if (p.frame != points.front().frame) {
      throw FrameMismatch("plane fit points span frames " + points.front().frame.str() +
                          " and " + p.frame.str());
    }
    raw.push_back(p.coords);
  }
  return fit_plane_raw(raw, plane_fit_threshold);
}

PlaneHN transform_plane(const Pose& pose, const PlaneHN& plane) {
  PlaneHN out = plane;
  out.normal = pose.rotation * plane.normal;
  out.d = plane.d - out.normal.dot(pose.translation);
  if (out.d > 0.0) {
    out.normal = -out.normal;
    out.d = -out.d;
  }
  return out;
}

}  // namespace palo
