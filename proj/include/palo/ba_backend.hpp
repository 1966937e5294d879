/**
 * @file ba_backend.hpp
 * @brief Sliding-window point-aided bundle adjustment.
 *
 * Two-stage backend: stage 1 solves the visual-inertial problem (IMU
 * preintegration + reprojection + loop factors), stage 2 adds point-to-plane
 * factors tying current-frame features to local map planes and estimates the
 * camera-to-LiDAR-world relative pose. The solver is a damped Gauss-Newton
 * over dense-per-block normal equations with the inverse-depth block
 * eliminated by Schur complement. Marginalization is replaced by fixation of
 * the oldest keyframe.
 */
#pragma once

#include <optional>

#include "palo/camera.hpp"
#include "palo/imu.hpp"
#include "palo/lidar_map.hpp"
#include "palo/pso_sampler.hpp"
#include "palo/tracks.hpp"

namespace palo {

/// Camera-to-LiDAR-world transform, one per agent; refers to the newest
/// keyframe's camera frame.
struct RelativePose {
  Quat rotation{Quat::Identity()};
  Vec3 translation{Vec3::Zero()};

  Pose pose(int64_t frame_index) const {
    return Pose(rotation, translation, FrameId::camera(frame_index), FrameId::lidar_world());
  }
  static RelativePose from_pose(const Pose& p) { return {p.rotation, p.translation}; }
};

/// Keyframe state: IMU-frame pose in C0 plus velocity and biases. With the
/// camera-IMU extrinsic applied it is the camera pose of the same index.
struct KeyframeState {
  int frame_index{0};    ///< global frame number
  double timestamp{0.0};
  ImuState state;
};

/// Inverse-depth feature track, anchored at its first in-window observation.
struct FeatureTrack {
  int id{0};
  int anchor{0};  ///< window index of the anchoring keyframe
  std::vector<TrackObservation> observations;  ///< frame = window index
  double inv_depth{0.5};
  bool outlier{false};

  const TrackObservation* obs_at(int window_index) const {
    for (const auto& o : observations) {
      if (o.frame == window_index) return &o;
    }
    return nullptr;
  }
};

enum class CouplingMode { LooselyCoupled, TightlyCoupled };

struct BaParams {
  int window_size{11};             ///< n_h + 1 keyframes
  double huber_reproj_px{1.0};
  double pixel_sigma{1.0};         ///< px; reprojection information 1/sigma^2
  double point_plane_weight_c{3.0};///< information = c / plane_fit_threshold
  double lambda_min{1e-3};         ///< inverse-depth floor (1/m)
  int max_iterations{20};
  double cost_decrease_tol{1e-6};
  int max_damping_escalations{5};
  CouplingMode mode{CouplingMode::TightlyCoupled};
  Vec3 gravity{0.0, 0.0, -9.81};
  AssociationParams assoc;
  double default_feature_depth{2.0};
};

// ---------------------------------------------------------------------------
// standalone residuals (unit-tested against finite differences)

/// Reprojection residual of one track between its anchor frame i and an
/// observing frame j: back-project u_i at depth 1/lambda, chain through the
/// two IMU poses and the camera-IMU extrinsic, unit-normalize, project, and
/// subtract u_j. Returns nullopt when the transferred point falls behind
/// camera j (factor dropped for the iteration).
/// Pose Jacobian columns: [dp, dtheta]; extrinsic t_ci maps IMU->camera.
std::optional<Eigen::Vector2d> reprojection_residual(
    const ImuState& state_i, const ImuState& state_j, double inv_depth,
    const Eigen::Vector2d& u_i, const Eigen::Vector2d& u_j, const Pose& t_ci,
    const PinholeIntrinsics& intrinsics, Eigen::Matrix<double, 2, 6>* jac_pose_i = nullptr,
    Eigen::Matrix<double, 2, 6>* jac_pose_j = nullptr,
    Eigen::Vector2d* jac_inv_depth = nullptr);

/// Point-to-plane residual of one feature against its associated map plane:
///   r = n . (R_LC * f_cur(lambda) + t_LC) + d
/// where f_cur(lambda) = R_tr * (1/lambda) * dir + t_tr is the feature point
/// in the current camera frame under the frozen anchor->current transfer
/// (identity transfer when the anchor is the current frame, recovering the
/// plain (1/lambda) R_LC x + t_LC form).
/// Rel Jacobian columns: [dt, dtheta]. In loosely-coupled mode the
/// inverse-depth Jacobian is zeroed.
double point_plane_residual(const RelativePose& rel, double inv_depth, const Vec3& dir_anchor,
                            const Quat& q_transfer, const Vec3& t_transfer, const PlaneHN& plane,
                            CouplingMode mode, Eigen::Matrix<double, 1, 6>* jac_rel = nullptr,
                            double* jac_inv_depth = nullptr);

// ---------------------------------------------------------------------------
// factor graph problem

struct PointPlaneFactor {
  int track{0};        ///< index into the window's track array
  Vec3 dir_anchor;     ///< normalized-plane direction at the anchor
  Quat q_transfer;     ///< frozen T_{C_cur <- C_anchor}
  Vec3 t_transfer;
  PlaneHN plane;       ///< LidarWorld
};

struct LoopFactor {
  bool a_in_window{true};
  int kf_a{0};        ///< window index when a_in_window
  ImuState fixed_a;   ///< historical pose when !a_in_window
  int kf_b{0};        ///< window index
  Quat q_meas;        ///< measured T_{Ia <- Ib}
  Vec3 t_meas;
  double sigma{1e-2};
};

struct SolveReport {
  bool solved{false};
  int iterations{0};
  double initial_cost{0.0}, final_cost{0.0};
  double initial_imu{0.0}, final_imu{0.0};
  double initial_reproj{0.0}, final_reproj{0.0};
  double initial_point_plane{0.0}, final_point_plane{0.0};
  double initial_loop{0.0}, final_loop{0.0};
  bool rel_rotation_held{false};
};

/// Mutable view of the window the solver optimizes. Point-plane factors are
/// present only in stage-2 solves; rel is optimized only when they are.
struct FactorGraphProblem {
  std::vector<KeyframeState>* keyframes{nullptr};
  std::vector<FeatureTrack>* tracks{nullptr};
  const std::vector<PreintegratedImu>* preintegrations{nullptr};
  RelativePose* rel{nullptr};
  std::vector<PointPlaneFactor> point_plane;
  std::vector<LoopFactor> loops;
  Pose t_ci{Pose::identity(FrameId::camera_world())};
  PinholeIntrinsics intrinsics;
  BaParams params;
  int fixed_keyframes{1};
  bool optimize_rel{false};
};

/// Damped Gauss-Newton with Schur elimination of inverse depths. Throws
/// SolverDiverged (states rolled back) when damping escalation cannot
/// produce a cost decrease.
SolveReport solve_window(FactorGraphProblem& problem);

// ---------------------------------------------------------------------------
// sliding window

struct TwoStageReport {
  SolveReport stage1;
  SolveReport stage2;
  bool stage2_ran{false};
  AssociationScore score_before;   ///< association quality at the predicted rel
  AssociationScore score_after;    ///< at the rel used for stage 2
  bool triggered{false};
  bool pso_ran{false};
  SampleResult pso;
  int point_plane_factors{0};
  // PSO inputs, kept for the sampler-comparison harness.
  FeatureCloud pso_cloud;
  SampleCandidate pso_predicted;
  SampleSpace pso_space;
  uint64_t pso_seed{0};
};

struct PipelineParams {
  BaParams ba;
  PinholeIntrinsics intrinsics;
  Pose t_ci{Pose(Quat::Identity(), Vec3::Zero(), FrameId::imu(-1), FrameId::camera(-1))};
  TriggerState trigger;
  AdaptiveSpaceParams space;
  PsoParams pso;
  bool pso_enabled{true};
};

/// Owns the bounded keyframe window, its tracks, and the relative pose.
class SlidingWindow {
 public:
  explicit SlidingWindow(const PipelineParams& params) : params_(params) {}

  const std::vector<KeyframeState>& keyframes() const { return keyframes_; }
  const std::vector<FeatureTrack>& tracks() const { return tracks_; }
  std::vector<FeatureTrack>& tracks() { return tracks_; }
  const RelativePose& rel() const { return rel_; }
  void set_rel(const RelativePose& rel) { rel_ = rel; }
  double scale_estimate() const { return scale_est_; }
  void set_scale_estimate(double s) { scale_est_ = s; }
  int size() const { return static_cast<int>(keyframes_.size()); }
  const KeyframeState& newest() const { return keyframes_.back(); }
  const PipelineParams& params() const { return params_; }

  /// Appends a keyframe (IMU-propagated prediction) plus the preintegration
  /// from the previous keyframe. The first keyframe passes an empty preint.
  void add_keyframe(const KeyframeState& kf, std::optional<PreintegratedImu> preint);

  /// Registers an observation of `track_id` in the newest keyframe; creates
  /// the track when new. depth_init seeds the inverse depth at the anchor.
  void add_observation(int track_id, double u, double v, double depth_init);

  /// Propagates rel from the previous solve to the newest keyframe using the
  /// two newest VIO states (no-op with fewer than two keyframes).
  void propagate_rel();

  /// Features observed in the newest keyframe, positioned in its camera
  /// frame via the frozen anchor transfer; basis for triggering and PSO.
  FeatureCloud current_feature_cloud() const;

  /// Stage 1 + trigger + optional PSO + stage 2. With no map (nullptr) or an
  /// empty one, stage 2 is skipped and the output equals stage 1's.
  TwoStageReport two_stage_step(const MapSnapshotPtr& map);

  /// Loop measurement between global frames (camera-frame relative pose).
  /// Re-solves the visual-inertial problem with the loop factor and
  /// re-anchors rel through the newest camera pose change. Throws
  /// UnknownFrame when a frame is neither in the window nor in history.
  SolveReport apply_loop_factor(int frame_a, int frame_b, const Pose& t_ca_cb, double sigma);

  /// Drops tracks whose inverse depth moved > 50% in the last solve, fell
  /// below lambda_min, or whose reprojection residual exceeds 3 px.
  int reject_outliers();

  /// Slides the window down to the configured size; re-anchors tracks whose
  /// anchor left and drops tracks with fewer than two observations.
  void slide();

  /// Full pose history (global frame -> IMU state in C0), kept for loops.
  const std::vector<std::pair<int, ImuState>>& history() const { return history_; }

  /// Camera pose T_{C0 <- C_k} of a window keyframe (IMU pose + extrinsic).
  Pose camera_pose(int window_index) const;

  /// Features observed in the newest frame with a valid plane association at
  /// the current rel; exposed for diagnostics and the sampler comparison.
  int associate_current(const MapSnapshotPtr& map, AssociationScore* score) const;

 private:
  struct PendingLoop {
    int frame_a{0}, frame_b{0};
    Quat q_meas{Quat::Identity()};
    Vec3 t_meas{Vec3::Zero()};
    double sigma{1e-2};
  };

  FactorGraphProblem make_problem(bool with_point_plane, const MapSnapshotPtr& map);
  int build_point_plane_factors(const MapSnapshotPtr& map, std::vector<PointPlaneFactor>* out,
                                AssociationScore* score) const;
  void record_history();

  PipelineParams params_;
  std::vector<KeyframeState> keyframes_;
  std::vector<PreintegratedImu> preints_;
  std::vector<FeatureTrack> tracks_;
  std::vector<PendingLoop> pending_loops_;
  RelativePose rel_;
  double scale_est_{1.0};
  std::vector<std::pair<int, ImuState>> history_;
  std::vector<double> presolve_lambda_;
  uint64_t pso_counter_{0};
};

}  // namespace palo
