/**
 * @file sampling.hpp
 * @brief Pose-sample parameterization shared by the initializer and the
 *        event-triggered samplers.
 *
 * A sample is (position, yaw, scale) with roll and pitch held fixed by
 * gravity alignment; only the yaw is searched.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "palo/errors.hpp"
#include "palo/geometry.hpp"

namespace palo {

/// A candidate rigid pose (plus feature-cloud scale) in the sampling space.
struct SampleCandidate {
  Vec3 position{Vec3::Zero()};
  double yaw{0.0};     ///< wrapped to (-pi, pi]
  double scale{1.0};   ///< > 0
  double roll{0.0};    ///< fixed from gravity alignment
  double pitch{0.0};   ///< fixed from gravity alignment

  Quat rotation() const {
    return yaw_quat(yaw) * Quat(Eigen::AngleAxisd(pitch, Vec3::UnitY())) *
           Quat(Eigen::AngleAxisd(roll, Vec3::UnitX()));
  }

  Pose pose(FrameId from, FrameId to) const {
    return Pose(rotation(), position, from, to);
  }
};

/// Eq.-style feature transfer into the LiDAR world frame:
/// f_L = R(yaw; fixed roll/pitch) * (scale * f) + position.
inline Vec3 transfer_feature(const SampleCandidate& c, const Vec3& f_c0) {
  return c.rotation() * (c.scale * f_c0) + c.position;
}

inline Point3 transfer_feature(const SampleCandidate& c, const Point3& f_c0) {
  return Point3(transfer_feature(c, f_c0.coords), FrameId::lidar_world());
}

/// Axis-aligned block of (position, yaw, scale) samples.
struct SampleSpace {
  Vec3 center{Vec3::Zero()};
  Vec3 half_extent{Vec3::Zero()};
  double yaw_center{0.0};
  double yaw_half_range{0.0};       ///< radians; full span is twice this
  double scale_min{1.0}, scale_max{1.0};
  Vec3 position_resolution{Vec3::Constant(0.5)};
  double yaw_resolution{10.0 * M_PI / 180.0};
  double scale_resolution{0.1};
  double roll{0.0}, pitch{0.0};

  void validate() const {
    auto check = [](double half, double res, const char* axis) {
      if (res <= 0.0) throw InvalidSpec(std::string("non-positive resolution on ") + axis);
      if (half < 0.0) throw InvalidSpec(std::string("negative extent on ") + axis);
      if (half > 0.0 && res > 2.0 * half + 1e-12) {
        throw InvalidSpec(std::string("resolution exceeds extent on ") + axis);
      }
    };
    check(half_extent.x(), position_resolution.x(), "x");
    check(half_extent.y(), position_resolution.y(), "y");
    check(half_extent.z(), position_resolution.z(), "z");
    check(yaw_half_range, yaw_resolution, "yaw");
    if (scale_min <= 0.0 || scale_max < scale_min) throw InvalidSpec("bad scale range");
    if (scale_resolution <= 0.0) throw InvalidSpec("non-positive scale resolution");
  }

  /// Inclusive symmetric grid: center-h, center-h+res, ..., center+h.
  static std::vector<double> axis_values(double center, double half, double res) {
    std::vector<double> out;
    if (half <= 0.0) {
      out.push_back(center);
      return out;
    }
    const int n = static_cast<int>(std::floor(half / res + 1e-9));
    for (int i = -n; i <= n; ++i) out.push_back(center + i * res);
    return out;
  }

  std::vector<double> xs() const { return axis_values(center.x(), half_extent.x(), position_resolution.x()); }
  std::vector<double> ys() const { return axis_values(center.y(), half_extent.y(), position_resolution.y()); }
  std::vector<double> zs() const { return axis_values(center.z(), half_extent.z(), position_resolution.z()); }
  std::vector<double> yaws() const { return axis_values(yaw_center, yaw_half_range, yaw_resolution); }

  std::vector<double> scales() const {
    std::vector<double> out;
    for (double s = scale_min; s <= scale_max + 1e-9; s += scale_resolution) out.push_back(s);
    return out;
  }

  std::size_t grid_size() const {
    return xs().size() * ys().size() * zs().size() * yaws().size() * scales().size();
  }

  SampleCandidate clamp(SampleCandidate c) const {
    c.position = c.position.cwiseMax(center - half_extent).cwiseMin(center + half_extent);
    const double dyaw = wrap_angle(c.yaw - yaw_center);
    c.yaw = wrap_angle(yaw_center + std::clamp(dyaw, -yaw_half_range, yaw_half_range));
    c.scale = std::clamp(c.scale, scale_min, scale_max);
    c.roll = roll;
    c.pitch = pitch;
    return c;
  }

  bool contains(const SampleCandidate& c) const {
    const Vec3 d = (c.position - center).cwiseAbs();
    return d.x() <= half_extent.x() + 1e-12 && d.y() <= half_extent.y() + 1e-12 &&
           d.z() <= half_extent.z() + 1e-12 &&
           std::abs(wrap_angle(c.yaw - yaw_center)) <= yaw_half_range + 1e-12 &&
           c.scale >= scale_min - 1e-12 && c.scale <= scale_max + 1e-12;
  }
};

}  // namespace palo
