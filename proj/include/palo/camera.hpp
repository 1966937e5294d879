/**
 * @file camera.hpp
 * @brief Pinhole camera model (no distortion) shared by the simulator and
 *        the reprojection factor.
 */
#pragma once

#include <Eigen/Core>

#include "palo/geometry.hpp"

namespace palo {

struct PinholeIntrinsics {
  double fx{458.0}, fy{457.0};
  double cx{320.0}, cy{240.0};
  int width{640}, height{480};

  /// Projects a camera-frame point (z > 0) to pixels.
  Eigen::Vector2d project(const Vec3& p) const {
    return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
  }

  /// Back-projects a pixel to the z = 1 normalized plane.
  Vec3 unproject(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }

  bool in_image(const Eigen::Vector2d& px, double margin = 0.0) const {
    return px.x() >= margin && px.x() <= width - 1 - margin && px.y() >= margin &&
           px.y() <= height - 1 - margin;
  }

  /// d(pixel)/d(camera point), the 2x3 projection Jacobian.
  Eigen::Matrix<double, 2, 3> project_jacobian(const Vec3& p) const {
    Eigen::Matrix<double, 2, 3> j;
    const double iz = 1.0 / p.z();
    j << fx * iz, 0.0, -fx * p.x() * iz * iz,
         0.0, fy * iz, -fy * p.y() * iz * iz;
    return j;
  }
};

}  // namespace palo
