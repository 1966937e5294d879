/**
 * @file pso_sampler.hpp
 * @brief Event-triggered pose correction: VIO pose propagation, the VFN/TFN
 *        trigger, adaptive sampling spaces, and particle-swarm search over
 *        (position, yaw, scale). Greedy-random and uniform-grid baselines
 *        run behind the same fitness for comparison.
 */
#pragma once

#include <random>

#include "palo/lidar_map.hpp"

namespace palo {

/// Propagates the camera-to-LiDAR-world pose of frame k-1 to frame k using
/// the VIO poses of the two IMU frames and the camera-IMU extrinsic. The
/// relative camera motion comes from the classic recursive relationship; the
/// chain onto the previous relative pose is plain composition.
/// `t_ci` maps IMU coordinates into camera coordinates.
Pose propagate_pose(const Pose& t_l_ck_prev, const Pose& vio_prev, const Pose& vio_cur,
                    const Pose& t_ci);

/// Relative camera motion C_{k-1} -> C_k from two VIO states (the building
/// block of propagate_pose, exposed for the pipeline and tests).
Pose relative_camera_motion(const Pose& vio_prev, const Pose& vio_cur, const Pose& t_ci);

struct TriggerState {
  double tau_trigger{0.30};
  double last_ratio{1.0};
  bool triggered{false};
};

/// triggered <=> vfn/tfn < tau. Throws ZeroFeatures when tfn = 0.
TriggerState check_trigger(const AssociationScore& score, TriggerState trigger);

struct AdaptiveSpaceParams {
  double base_extent{0.5};       ///< m, half extent at ratio 1
  double kappa{2.0};             ///< growth factor toward ratio 0
  double yaw_min{6.0 * M_PI / 180.0};
  double yaw_max{20.0 * M_PI / 180.0};
  double position_resolution{0.0625};
  double yaw_resolution{2.0 * M_PI / 180.0};
  double scale_half{0.05};
  double scale_resolution{0.025};
};

/// Sampling space centered on the predicted pose; extent scales inversely
/// with the valid ratio: extent = base * (1 + kappa * (1 - vfn/tfn)).
SampleSpace adaptive_space(const Pose& t_pred, const AssociationScore& score,
                           double current_scale = 1.0, const AdaptiveSpaceParams& params = {});

struct PsoParams {
  int m{10};          ///< particles
  int g_max{30};      ///< iteration cap (per-frame budget)
  double w{0.4};      ///< inertia
  double c1{1.0};     ///< personal coefficient
  double c2{1.5};     ///< social coefficient
  int stagnation_limit{8};  ///< early stop after this many stale iterations
  uint64_t seed{0};

  void validate() const {
    if (m < 2 || g_max < 1 || w < 0.0 || w > 1.0 || c1 < 0.0 || c2 < 0.0) {
      throw InvalidSpec("bad PSO parameters");
    }
  }
};

struct Particle {
  SampleCandidate position;
  Eigen::Matrix<double, 5, 1> velocity{Eigen::Matrix<double, 5, 1>::Zero()};
  SampleCandidate pbest;
  double pbest_fitness{std::numeric_limits<double>::infinity()};
};

/// rho = (1 - vfn/tfn) + mean_valid_distance / valid_match_threshold;
/// vfn = 0 yields the worst finite value 2. Lower is better.
double fitness(const AssociationScore& score, const AssociationParams& assoc);
double fitness(const SampleCandidate& candidate, const FeatureCloud& cloud,
               const MapSnapshot& map, const AssociationParams& assoc);

struct SampleResult {
  SampleCandidate best;
  double best_fitness{std::numeric_limits<double>::infinity()};
  int iterations{0};
  std::size_t evaluations{0};
  std::vector<double> gbest_trace;  ///< fitness after each iteration
};

/// Particle swarm over the space: particle 0 pinned at the predicted pose,
/// the rest uniform in the space with zero initial velocity; velocities are
/// clamped at half the space extent and positions clamped into the space.
/// Bit-reproducible under a fixed params.seed.
SampleResult pso_sample(const FeatureCloud& cloud, const MapSnapshot& map,
                        const SampleCandidate& predicted, const SampleSpace& space,
                        const PsoParams& params, const AssociationParams& assoc = {});

/// Greedy random sampling: `budget` uniform draws, keep the best.
SampleResult greedy_random_sample(const FeatureCloud& cloud, const MapSnapshot& map,
                                  const SampleCandidate& predicted, const SampleSpace& space,
                                  std::size_t budget, uint64_t seed,
                                  const AssociationParams& assoc = {});

/// Adaptive-window uniform sampling: exhaustive grid over the space.
SampleResult uniform_grid_sample(const FeatureCloud& cloud, const MapSnapshot& map,
                                 const SampleCandidate& predicted, const SampleSpace& space,
                                 const AssociationParams& assoc = {});

}  // namespace palo
