/**
 * @file init_sampler.hpp
 * @brief Point cloud-aided camera initialization: two-level blocked sampling
 *        over (position, yaw, scale) against the LiDAR map.
 *
 * Level 1 grids the full search space coarsely and scores each cell by its
 * valid-association count plus the vfn variance over the 3x3x3 position
 * neighborhood. Passing cells (capped at the top three) spawn fine sub-grids;
 * the best fine cell wins by (vfn desc, mean distance asc) and the result is
 * gated by the fine thresholds.
 */
#pragma once

#include "palo/lidar_map.hpp"

namespace palo {

/// Gate thresholds of the two levels. Counts are fractions of the total
/// feature number; variances are in squared-count units.
struct InitThresholds {
  double m_coarse_ratio{0.3};  ///< coarse vfn gate, fraction of tfn
  double m_fine_ratio{0.5};    ///< final vfn gate, fraction of tfn
  double eps_coarse{1e9};      ///< coarse neighborhood-variance gate
  double eps_fine{1e9};        ///< final neighborhood-variance gate
  int max_spawned_cells{3};    ///< coarse cells promoted to fine grids
};

/// Fine-level grid geometry around each promoted coarse cell. An axis that
/// is degenerate (single-valued) at the coarse level stays degenerate.
struct FineLevelParams {
  double position_half{0.25};
  double position_resolution{0.0625};
  double yaw_half{6.0 * M_PI / 180.0};
  double yaw_resolution{2.0 * M_PI / 180.0};
  double scale_half{0.1};
  double scale_resolution{0.025};
};

struct InitResult {
  enum class Status { Success, Failure };
  Status status{Status::Failure};
  SampleCandidate best;
  int vfn{0};
  int tfn{0};
  double variance{0.0};
  double mean_valid_distance{0.0};
  std::size_t evaluated_candidates{0};  ///< total candidate evaluations spent
  bool ok() const { return status == Status::Success; }
};

/// Drops features whose distance from the cloud centroid deviates from the
/// median by more than 3 median-absolute-deviations.
FeatureCloud remove_outliers(const FeatureCloud& cloud);

/// Two-level blocked search. Removes outliers internally; requires >= 20
/// features afterwards and a non-empty map. Failure is a status, not an
/// error.
InitResult multi_level_sample(const FeatureCloud& cloud, const MapSnapshot& map,
                              const SampleSpace& space, const InitThresholds& thresholds = {},
                              const AssociationParams& assoc = {},
                              const FineLevelParams& fine = {});

}  // namespace palo
