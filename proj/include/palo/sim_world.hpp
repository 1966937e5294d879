/**
 * @file sim_world.hpp
 * @brief Deterministic synthetic-world generator: planar scenes, LiDAR
 *        scans, camera trajectories, IMU streams, feature tracks, and exact
 *        ground truth for every emitted quantity.
 *
 * The trajectory is a natural cubic spline (continuous velocity and
 * acceleration); IMU signals come from its analytic derivatives. Discrete
 * ground-truth states are produced by midpoint-integrating the emitted
 * noise-free IMU stream from the exact spline start state, so ground truth,
 * preintegration, and projections agree to machine precision. A self-check
 * keeps the discrete states within oracle tolerance of the spline.
 */
#pragma once

#include <random>

#include "palo/camera.hpp"
#include "palo/feature_cloud.hpp"
#include "palo/geometry.hpp"
#include "palo/imu.hpp"
#include "palo/lidar_map.hpp"
#include "palo/tracks.hpp"

namespace palo {
namespace sim {

/// Rectangular planar patch: origin + s*u_axis + t*v_axis, s in [0,len_u],
/// t in [0,len_v].
struct SurfaceRect {
  Vec3 origin;
  Vec3 u_axis;  ///< unit
  Vec3 v_axis;  ///< unit
  double len_u{1.0}, len_v{1.0};

  Vec3 normal() const { return u_axis.cross(v_axis).normalized(); }
  double area() const { return len_u * len_v; }
  Vec3 at(double s, double t) const { return origin + s * u_axis + t * v_axis; }
};

enum class RoomPreset { Room, Corridor, LShape };

struct SceneSpec {
  RoomPreset preset{RoomPreset::Room};
  Vec3 size{6.0, 5.0, 3.0};     ///< extents, meters
  double density{100.0};        ///< points per square meter
  uint64_t seed{1};
  std::vector<SurfaceRect> extra_surfaces;  ///< appended to the preset shell
};

struct Scene {
  std::vector<SurfaceRect> surfaces;
  std::vector<Vec3> map_points;  ///< LidarWorld, noise-free, on surfaces
};

Scene generate_scene(const SceneSpec& spec);

/// Timed pose waypoint for the camera path (position + yaw; roll and pitch
/// stay level).
struct Waypoint {
  double t{0.0};
  Vec3 position{Vec3::Zero()};
  double yaw{0.0};
};

struct TrajectorySpec {
  std::vector<Waypoint> waypoints;  ///< >= 2, ascending time
  double camera_hz{5.0};
  double imu_hz{200.0};
  double lidar_hz{2.0};
};

/// Natural cubic spline with analytic first and second derivatives.
class CubicSpline {
 public:
  CubicSpline() = default;
  CubicSpline(std::vector<double> t, std::vector<double> y);
  double value(double t) const;
  double deriv1(double t) const;
  double deriv2(double t) const;

 private:
  int segment(double t) const;
  std::vector<double> t_, y_, m_;  ///< knots, values, second derivatives
};

/// Continuous camera trajectory in the LiDAR world frame. The camera frame
/// is optical (z forward, x right, y down); yaw steers the forward axis.
class TrajectoryModel {
 public:
  explicit TrajectoryModel(const std::vector<Waypoint>& waypoints);

  double t_begin() const { return t0_; }
  double t_end() const { return t1_; }

  Vec3 position(double t) const;
  Vec3 velocity(double t) const;
  Vec3 acceleration(double t) const;
  double yaw(double t) const;
  double yaw_rate(double t) const;
  Quat rotation(double t) const;  ///< R_{L Ck}, optical axes
  Pose pose(double t, int64_t frame_index) const;

  /// Optical base: camera axes at yaw 0 (z forward along +x world).
  static Mat3 optical_base();

 private:
  CubicSpline x_, y_, z_, yaw_;
  double t0_{0.0}, t1_{0.0};
};

struct ImuSimParams {
  ImuBias true_bias;
  ImuNoiseParams noise;   ///< densities; also used for sample noise draws
  bool add_noise{false};
  Vec3 gravity{0.0, 0.0, -9.81};
};

/// Samples the trajectory's analytic specific force and angular rate.
std::vector<ImuSample> simulate_imu(const TrajectoryModel& traj, double rate_hz,
                                    const ImuSimParams& params, std::mt19937_64& rng);

struct TimedScan {
  double t{0.0};
  int64_t index{0};
  std::vector<Point3> points;  ///< scan frame
  Pose sensor_pose;            ///< scan frame -> LidarWorld
};

/// Scans re-sample the scene surfaces within range of the sensor.
std::vector<TimedScan> simulate_lidar(const Scene& scene, const std::vector<Pose>& sensor_poses,
                                      const std::vector<double>& times, double noise_sigma,
                                      double max_range, double points_per_scan,
                                      std::mt19937_64& rng);

struct TrackSimParams {
  double pixel_sigma{0.0};
  double dropout_rate{0.0};
  int min_observations{2};
  double min_depth{0.3};
};

/// Ground truth and sensor data for one agent run.
struct SimData {
  // scene
  Scene scene;
  std::vector<SurfaceRect> surfaces;

  // sensors
  std::vector<ImuSample> imu;          ///< noisy when requested
  std::vector<ImuSample> imu_clean;    ///< always noise-free
  std::vector<double> frame_times;     ///< camera timestamps
  std::vector<Track> tracks;           ///< pixel observations (+depth_init)
  FeatureCloud init_cloud;             ///< up-to-scale C0 cloud for init

  // truth
  Pose t_l_c0;                          ///< C0 -> LidarWorld (yaw + translation)
  double true_scale{1.0};              ///< init cloud scale factor
  std::vector<ImuState> gt_states_c0;  ///< per frame, IMU==camera frame in C0
  std::vector<Pose> gt_t_l_ck;         ///< per frame camera pose in L
  std::vector<Vec3> landmarks;         ///< LidarWorld positions by track index
  std::vector<double> true_depths;     ///< first-observation depth by track index
  ImuBias true_bias;
  Vec3 gravity_c0{0.0, 0.0, -9.81};
  PinholeIntrinsics intrinsics;

  double self_check_error{0.0};  ///< max |discrete GT - spline| position gap
};

struct SimConfig {
  SceneSpec scene;
  TrajectorySpec trajectory;
  PinholeIntrinsics intrinsics;
  ImuSimParams imu;
  TrackSimParams tracks;
  int landmark_count{60};
  double init_cloud_scale{1.0};     ///< true up-to-scale factor of the init cloud
  double t_l_c0_yaw{0.0};           ///< truth: C0 yaw in L
  Vec3 t_l_c0_offset{Vec3::Zero()}; ///< truth: C0 origin in L (defaults to path start)
  bool offset_is_path_start{true};
  uint64_t seed{1};
};

/// One-stop generation of a consistent dataset plus ground truth.
SimData generate(const SimConfig& config);

/// Default waypoint loop inside the preset room.
std::vector<Waypoint> default_loop(const SceneSpec& scene, double duration);

}  // namespace sim
}  // namespace palo
