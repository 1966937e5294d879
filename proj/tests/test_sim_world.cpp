#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "palo/sim_world.hpp"

using namespace palo;
using namespace palo::sim;

namespace {

SimConfig small_config(uint64_t seed) {
  SimConfig cfg;
  cfg.seed = seed;
  cfg.scene.density = 60.0;
  cfg.landmark_count = 40;
  cfg.trajectory.camera_hz = 5.0;
  cfg.trajectory.imu_hz = 200.0;
  cfg.trajectory.waypoints = default_loop(cfg.scene, 8.0);
  cfg.t_l_c0_yaw = 0.3;
  return cfg;
}

}  // namespace

TEST_CASE("scene points lie exactly on declared surfaces") {
  SceneSpec spec;
  spec.density = 40.0;
  const Scene scene = generate_scene(spec);
  CHECK(scene.surfaces.size() == 6);
  CHECK(scene.map_points.size() > 1000);
  for (size_t i = 0; i < scene.map_points.size(); i += 97) {
    double best = 1e9;
    for (const auto& s : scene.surfaces) {
      best = std::min(best, std::abs(s.normal().dot(scene.map_points[i] - s.origin)));
    }
    CHECK(best < 1e-12);
  }
}

TEST_CASE("static trajectory reads gravity only") {
  std::vector<Waypoint> wps;
  wps.push_back({0.0, Vec3(1, 0, 1), 0.7});
  wps.push_back({2.0, Vec3(1, 0, 1), 0.7});
  const TrajectoryModel traj(wps);
  ImuSimParams params;  // no noise, zero bias
  std::mt19937_64 rng(1);
  const auto samples = simulate_imu(traj, 100.0, params, rng);
  const Quat r = traj.rotation(1.0);
  const Vec3 expect = r.conjugate() * (-params.gravity);
  for (const auto& s : samples) {
    CHECK((s.accel - expect).norm() < 1e-9);
    CHECK(s.gyro.norm() < 1e-9);
  }
}

TEST_CASE("same seed gives bit-identical outputs") {
  const SimData a = generate(small_config(42));
  const SimData b = generate(small_config(42));
  REQUIRE(a.imu.size() == b.imu.size());
  for (size_t i = 0; i < a.imu.size(); ++i) {
    CHECK(a.imu[i].accel == b.imu[i].accel);
    CHECK(a.imu[i].gyro == b.imu[i].gyro);
  }
  REQUIRE(a.tracks.size() == b.tracks.size());
  for (size_t i = 0; i < a.tracks.size(); ++i) {
    REQUIRE(a.tracks[i].observations.size() == b.tracks[i].observations.size());
    for (size_t j = 0; j < a.tracks[i].observations.size(); ++j) {
      CHECK(a.tracks[i].observations[j].u == b.tracks[i].observations[j].u);
    }
  }
}

TEST_CASE("noise-free tracks reproject exactly at ground truth") {
  const SimData data = generate(small_config(7));
  REQUIRE(data.tracks.size() >= 20);
  for (size_t ti = 0; ti < data.tracks.size(); ++ti) {
    const auto& track = data.tracks[ti];
    const Vec3 lm = data.landmarks[ti];
    for (const auto& obs : track.observations) {
      const Pose cam = data.gt_t_l_ck[obs.frame];
      const Vec3 in_cam = cam.inverse().act(lm);
      const Eigen::Vector2d px = data.intrinsics.project(in_cam);
      CHECK(std::abs(px.x() - obs.u) < 1e-9);
      CHECK(std::abs(px.y() - obs.v) < 1e-9);
    }
  }
}

TEST_CASE("landmark on the optical axis projects to the principal point") {
  // Camera at origin looking along +x (yaw 0); landmark 2 m ahead.
  std::vector<Waypoint> wps;
  wps.push_back({0.0, Vec3::Zero(), 0.0});
  wps.push_back({1.0, Vec3::Zero(), 0.0});
  const TrajectoryModel traj(wps);
  const Pose cam = traj.pose(0.0, 0);
  const Vec3 landmark(2.0, 0.0, 0.0);
  const Vec3 in_cam = cam.inverse().act(landmark);
  CHECK(in_cam.z() == doctest::Approx(2.0));
  PinholeIntrinsics intr;
  const auto px = intr.project(in_cam);
  CHECK(px.x() == doctest::Approx(intr.cx));
  CHECK(px.y() == doctest::Approx(intr.cy));
  // inverse depth of the landmark
  CHECK(1.0 / in_cam.z() == doctest::Approx(0.5));
}

TEST_CASE("discrete ground truth stays within oracle tolerance of the spline") {
  const SimData data = generate(small_config(3));
  CHECK(data.self_check_error < 1e-4);
}

TEST_CASE("preintegrating simulated imu closes the loop with ground truth") {
  const SimData data = generate(small_config(11));
  // across every camera interval, preintegration + residual of GT states is ~0
  const long per_frame = std::lround(200.0 / 5.0);
  double worst = 0.0;
  for (size_t k = 0; k + 1 < data.gt_states_c0.size(); ++k) {
    std::vector<ImuSample> span(data.imu_clean.begin() + k * per_frame,
                                data.imu_clean.begin() + (k + 1) * per_frame + 1);
    const auto pre = preintegrate(span, data.gt_states_c0[k].bias, {});
    const auto r = imu_residual(data.gt_states_c0[k], data.gt_states_c0[k + 1], pre,
                                data.gravity_c0);
    worst = std::max(worst, r.cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-8);

  // endpoint position against the spline-anchored truth
  ImuState s = data.gt_states_c0.front();
  s = propagate_state(s, data.imu_clean, data.gravity_c0);
  CHECK((s.p - data.gt_states_c0.back().p).norm() < 1e-4);
}

TEST_CASE("lidar scans lie on surfaces within noise") {
  SceneSpec spec;
  spec.density = 30.0;
  const Scene scene = generate_scene(spec);
  std::vector<Pose> poses{Pose(Quat::Identity(), Vec3(0, 0, 1), FrameId::lidar_scan(0),
                               FrameId::lidar_world())};
  std::vector<double> times{0.0};
  std::mt19937_64 rng(5);
  const double sigma = 0.01;
  const auto scans = simulate_lidar(scene, poses, times, sigma, 30.0, 500, rng);
  REQUIRE(scans.size() == 1);
  REQUIRE(scans[0].points.size() == 500);
  int within = 0;
  for (const auto& p : scans[0].points) {
    const Vec3 w = scans[0].sensor_pose.act(p.coords);
    double best = 1e9;
    for (const auto& s : scene.surfaces) {
      best = std::min(best, std::abs(s.normal().dot(w - s.origin)));
    }
    if (best <= 3.0 * sigma) ++within;
  }
  CHECK(within >= 490);  // 99.7% within 3 sigma, with slack
}

TEST_CASE("init cloud recovers landmarks under the true candidate") {
  SimConfig cfg = small_config(9);
  cfg.init_cloud_scale = 1.15;
  const SimData data = generate(cfg);
  SampleCandidate truth;
  truth.position = data.t_l_c0.translation;
  truth.yaw = 0.3;
  truth.scale = 1.15;
  for (size_t i = 0; i < data.init_cloud.points.size(); ++i) {
    const Vec3 in_l = transfer_feature(truth, data.init_cloud.points[i].point);
    CHECK((in_l - data.landmarks[i]).norm() < 1e-9);
  }
}
