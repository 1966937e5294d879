/**
 * @file feature_cloud.hpp
 * @brief Sparse camera feature point cloud used for map registration.
 */
#pragma once

#include <string>
#include <vector>

#include "palo/geometry.hpp"

namespace palo {

/// One up-to-scale feature point. Inverse depth is carried when known
/// (simulator output / converter contract); NaN otherwise.
struct FeaturePoint {
  int id{0};
  Vec3 point{Vec3::Zero()};
  double inv_depth{std::numeric_limits<double>::quiet_NaN()};
};

/// Sparse feature cloud in a single (usually C0) frame.
struct FeatureCloud {
  FrameId frame{FrameId::camera_world()};
  std::vector<FeaturePoint> points;

  int size() const { return static_cast<int>(points.size()); }
  bool empty() const { return points.empty(); }
};

/// Reads `feature_id,x,y,z` CSV ('#' comments and blank lines skipped).
FeatureCloud load_feature_cloud_csv(const std::string& path);

/// Writes the same format.
void save_feature_cloud_csv(const std::string& path, const FeatureCloud& cloud);

}  // namespace palo
