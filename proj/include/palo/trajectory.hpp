/**
 * @file trajectory.hpp
 * @brief TUM-format trajectory I/O, Umeyama alignment and ATE evaluation.
 */
#pragma once

#include <string>
#include <vector>

#include "palo/geometry.hpp"

namespace palo {

struct TrajectoryEntry {
  double t{0.0};
  Quat rotation{Quat::Identity()};
  Vec3 translation{Vec3::Zero()};
};

using Trajectory = std::vector<TrajectoryEntry>;

/// TUM layout: `timestamp tx ty tz qx qy qz qw`, '#' comments skipped.
Trajectory load_tum(const std::string& path);
void save_tum(const std::string& path, const Trajectory& traj);

/// Closed-form rigid (SE(3)) alignment mapping `source` onto `target`.
Pose umeyama_alignment(const std::vector<Vec3>& source, const std::vector<Vec3>& target);

struct AteReport {
  double rmse{0.0};
  double mean{0.0};
  double max{0.0};
  int matched{0};
  std::vector<double> per_frame;   ///< translation error per matched pose
  std::vector<double> timestamps;  ///< matched estimate timestamps
};

/// Nearest-neighbor timestamp matching within `match_tolerance` seconds,
/// optional Umeyama alignment, per-pose translation error RMSE. Throws
/// NoOverlap when nothing matches.
AteReport evaluate_ate(const Trajectory& estimate, const Trajectory& ground_truth, bool align,
                       double match_tolerance = 0.010);

}  // namespace palo
