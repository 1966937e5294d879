#include "palo/sim_world.hpp"

#include <algorithm>
#include <cmath>

#include "palo/errors.hpp"

namespace palo {
namespace sim {

Scene generate_scene(const SceneSpec& spec) {
  Scene scene;
  const double sx = spec.size.x(), sy = spec.size.y(), sz = spec.size.z();
  const Vec3 lo(-sx / 2, -sy / 2, 0.0);

  auto rect = [](const Vec3& origin, const Vec3& u, const Vec3& v, double lu, double lv) {
    SurfaceRect r;
    r.origin = origin;
    r.u_axis = u.normalized();
    r.v_axis = v.normalized();
    r.len_u = lu;
    r.len_v = lv;
    return r;
  };

  // Shell: floor, ceiling, four walls.
  scene.surfaces.push_back(rect(lo, Vec3::UnitX(), Vec3::UnitY(), sx, sy));                    // floor
  scene.surfaces.push_back(rect(lo + Vec3(0, 0, sz), Vec3::UnitX(), Vec3::UnitY(), sx, sy));   // ceiling
  scene.surfaces.push_back(rect(lo, Vec3::UnitX(), Vec3::UnitZ(), sx, sz));                    // y = lo.y
  scene.surfaces.push_back(rect(lo + Vec3(0, sy, 0), Vec3::UnitX(), Vec3::UnitZ(), sx, sz));   // y = hi.y
  scene.surfaces.push_back(rect(lo, Vec3::UnitY(), Vec3::UnitZ(), sy, sz));                    // x = lo.x
  scene.surfaces.push_back(rect(lo + Vec3(sx, 0, 0), Vec3::UnitY(), Vec3::UnitZ(), sy, sz));   // x = hi.x

  if (spec.preset == RoomPreset::LShape) {
    // Interior partition closing off one quadrant.
    scene.surfaces.push_back(rect(Vec3(0, lo.y(), 0), Vec3::UnitY(), Vec3::UnitZ(), sy / 2, sz));
    scene.surfaces.push_back(rect(Vec3(0, 0, 0), Vec3::UnitX(), Vec3::UnitZ(), sx / 2, sz));
  }
  for (const auto& extra : spec.extra_surfaces) scene.surfaces.push_back(extra);

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (const auto& s : scene.surfaces) {
    const long count = std::lround(s.area() * spec.density);
    for (long i = 0; i < count; ++i) {
      scene.map_points.push_back(s.at(u01(rng) * s.len_u, u01(rng) * s.len_v));
    }
  }
  return scene;
}

// ---------------------------------------------------------------------------
// spline

CubicSpline::CubicSpline(std::vector<double> t, std::vector<double> y)
    : t_(std::move(t)), y_(std::move(y)) {
  const int n = static_cast<int>(t_.size());
  if (n < 2) throw InvalidSpec("spline needs >= 2 knots");
  m_.assign(n, 0.0);
  if (n == 2) return;

  // Natural spline: tridiagonal solve for interior second derivatives.
  std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0);
  for (int i = 1; i < n - 1; ++i) {
    const double h0 = t_[i] - t_[i - 1];
    const double h1 = t_[i + 1] - t_[i];
    if (h0 <= 0 || h1 <= 0) throw InvalidSpec("spline knots must increase");
    a[i] = h0 / 6.0;
    b[i] = (h0 + h1) / 3.0;
    c[i] = h1 / 6.0;
    d[i] = (y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0;
  }
  for (int i = 2; i < n - 1; ++i) {
    const double w = a[i] / b[i - 1];
    b[i] -= w * c[i - 1];
    d[i] -= w * d[i - 1];
  }
  for (int i = n - 2; i >= 1; --i) {
    m_[i] = (d[i] - c[i] * (i + 1 < n - 1 ? m_[i + 1] : 0.0)) / b[i];
  }
}

int CubicSpline::segment(double t) const {
  const int n = static_cast<int>(t_.size());
  int lo = 0, hi = n - 2;
  while (lo < hi) {
    const int mid = (lo + hi + 1) / 2;
    if (t_[mid] <= t) lo = mid;
    else hi = mid - 1;
  }
  return lo;
}

double CubicSpline::value(double t) const {
  t = std::clamp(t, t_.front(), t_.back());
  const int i = segment(t);
  const double h = t_[i + 1] - t_[i];
  const double A = (t_[i + 1] - t) / h, B = (t - t_[i]) / h;
  return A * y_[i] + B * y_[i + 1] +
         ((A * A * A - A) * m_[i] + (B * B * B - B) * m_[i + 1]) * h * h / 6.0;
}

double CubicSpline::deriv1(double t) const {
  t = std::clamp(t, t_.front(), t_.back());
  const int i = segment(t);
  const double h = t_[i + 1] - t_[i];
  const double A = (t_[i + 1] - t) / h, B = (t - t_[i]) / h;
  return (y_[i + 1] - y_[i]) / h - (3.0 * A * A - 1.0) / 6.0 * h * m_[i] +
         (3.0 * B * B - 1.0) / 6.0 * h * m_[i + 1];
}

double CubicSpline::deriv2(double t) const {
  t = std::clamp(t, t_.front(), t_.back());
  const int i = segment(t);
  const double h = t_[i + 1] - t_[i];
  const double A = (t_[i + 1] - t) / h, B = (t - t_[i]) / h;
  return A * m_[i] + B * m_[i + 1];
}

// ---------------------------------------------------------------------------
// trajectory

TrajectoryModel::TrajectoryModel(const std::vector<Waypoint>& waypoints) {
  if (waypoints.size() < 2) throw InvalidSpec("trajectory needs >= 2 waypoints");
  std::vector<double> t, x, y, z, yaw;
  double prev_yaw = waypoints.front().yaw;
  double unwrapped = prev_yaw;
  for (const auto& w : waypoints) {
    t.push_back(w.t);
    x.push_back(w.position.x());
    y.push_back(w.position.y());
    z.push_back(w.position.z());
    unwrapped += wrap_angle(w.yaw - prev_yaw);
    prev_yaw = w.yaw;
    yaw.push_back(unwrapped);
  }
  x_ = CubicSpline(t, x);
  y_ = CubicSpline(t, y);
  z_ = CubicSpline(t, z);
  yaw_ = CubicSpline(t, yaw);
  t0_ = waypoints.front().t;
  t1_ = waypoints.back().t;
}

Mat3 TrajectoryModel::optical_base() {
  // Camera axes in the yaw-0 world: x right (-Y), y down (-Z), z forward (+X).
  Mat3 b;
  b.col(0) = Vec3(0, -1, 0);
  b.col(1) = Vec3(0, 0, -1);
  b.col(2) = Vec3(1, 0, 0);
  return b;
}

Vec3 TrajectoryModel::position(double t) const { return {x_.value(t), y_.value(t), z_.value(t)}; }
Vec3 TrajectoryModel::velocity(double t) const {
  return {x_.deriv1(t), y_.deriv1(t), z_.deriv1(t)};
}
Vec3 TrajectoryModel::acceleration(double t) const {
  return {x_.deriv2(t), y_.deriv2(t), z_.deriv2(t)};
}
double TrajectoryModel::yaw(double t) const { return yaw_.value(t); }
double TrajectoryModel::yaw_rate(double t) const { return yaw_.deriv1(t); }

Quat TrajectoryModel::rotation(double t) const {
  return yaw_quat(yaw_.value(t)) * Quat(optical_base());
}

Pose TrajectoryModel::pose(double t, int64_t frame_index) const {
  return Pose(rotation(t), position(t), FrameId::camera(frame_index), FrameId::lidar_world());
}

// ---------------------------------------------------------------------------
// sensors

std::vector<ImuSample> simulate_imu(const TrajectoryModel& traj, double rate_hz,
                                    const ImuSimParams& params, std::mt19937_64& rng) {
  std::vector<ImuSample> out;
  const double dt = 1.0 / rate_hz;
  const long steps = std::lround((traj.t_end() - traj.t_begin()) / dt);
  std::normal_distribution<double> n01(0.0, 1.0);
  const double sa = params.add_noise ? params.noise.sigma_a * std::sqrt(rate_hz) : 0.0;
  const double sw = params.add_noise ? params.noise.sigma_w * std::sqrt(rate_hz) : 0.0;
  for (long i = 0; i <= steps; ++i) {
    const double t = traj.t_begin() + i * dt;
    const Quat r = traj.rotation(t);
    ImuSample s;
    s.timestamp = t;
    s.accel = r.conjugate() * (traj.acceleration(t) - params.gravity) + params.true_bias.accel;
    // Angular velocity is pure yaw in the world; in optical axes that is a
    // rotation about the camera's up (-y) axis.
    s.gyro = r.conjugate() * Vec3(0, 0, traj.yaw_rate(t)) + params.true_bias.gyro;
    if (params.add_noise) {
      s.accel += Vec3(n01(rng), n01(rng), n01(rng)) * sa;
      s.gyro += Vec3(n01(rng), n01(rng), n01(rng)) * sw;
    }
    out.push_back(s);
  }
  return out;
}

std::vector<TimedScan> simulate_lidar(const Scene& scene, const std::vector<Pose>& sensor_poses,
                                      const std::vector<double>& times, double noise_sigma,
                                      double max_range, double points_per_scan,
                                      std::mt19937_64& rng) {
  if (sensor_poses.size() != times.size()) throw InvalidSpec("poses/times size mismatch");
  std::vector<TimedScan> out;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);

  double total_area = 0.0;
  for (const auto& s : scene.surfaces) total_area += s.area();

  for (size_t k = 0; k < times.size(); ++k) {
    TimedScan scan;
    scan.t = times[k];
    scan.index = static_cast<int64_t>(k);
    scan.sensor_pose = Pose(sensor_poses[k].rotation, sensor_poses[k].translation,
                            FrameId::lidar_scan(scan.index), FrameId::lidar_world());
    const Pose world_to_scan = scan.sensor_pose.inverse();
    const Vec3 origin = sensor_poses[k].translation;
    long budget = std::lround(points_per_scan);
    long attempts = 0;
    while (budget > 0 && attempts < 50 * std::lround(points_per_scan)) {
      ++attempts;
      // area-weighted surface choice
      double pick = u01(rng) * total_area;
      size_t si = 0;
      for (; si + 1 < scene.surfaces.size(); ++si) {
        if (pick < scene.surfaces[si].area()) break;
        pick -= scene.surfaces[si].area();
      }
      const auto& s = scene.surfaces[si];
      Vec3 p = s.at(u01(rng) * s.len_u, u01(rng) * s.len_v);
      if ((p - origin).norm() > max_range) continue;
      p += s.normal() * (noise_sigma * n01(rng));
      scan.points.emplace_back(world_to_scan.act(p), FrameId::lidar_scan(scan.index));
      --budget;
    }
    out.push_back(std::move(scan));
  }
  return out;
}

std::vector<Waypoint> default_loop(const SceneSpec& scene, double duration) {
  // Elliptical arc inside the room, camera yaw tracking the tangent.
  const double rx = scene.size.x() * 0.28;
  const double ry = scene.size.y() * 0.28;
  const double height = scene.size.z() * 0.45;
  const int n = 9;
  std::vector<Waypoint> wps;
  for (int i = 0; i < n; ++i) {
    const double f = static_cast<double>(i) / (n - 1);
    const double ang = 1.5 * M_PI * f;  // three-quarter loop, no wrap games
    Waypoint w;
    w.t = duration * f;
    w.position = Vec3(rx * std::cos(ang), ry * std::sin(ang), height + 0.25 * std::sin(2 * ang));
    // tangent direction of the ellipse
    w.yaw = std::atan2(ry * std::cos(ang), -rx * std::sin(ang));
    wps.push_back(w);
  }
  return wps;
}

SimData generate(const SimConfig& config) {
  SimData data;
  std::mt19937_64 rng(config.seed);

  SceneSpec scene_spec = config.scene;
  scene_spec.seed = config.seed * 7919 + 17;
  data.scene = generate_scene(scene_spec);
  data.surfaces = data.scene.surfaces;
  data.intrinsics = config.intrinsics;
  data.true_bias = config.imu.true_bias;

  TrajectorySpec traj_spec = config.trajectory;
  if (traj_spec.waypoints.empty()) {
    traj_spec.waypoints = default_loop(scene_spec, 20.0);
  }
  const TrajectoryModel traj(traj_spec.waypoints);
  const double t0 = traj.t_begin();

  // Truth anchor: C0 is gravity-aligned, yawed and offset inside L.
  const Vec3 c0_offset =
      config.offset_is_path_start ? traj.position(t0) : config.t_l_c0_offset;
  data.t_l_c0 = Pose(yaw_quat(config.t_l_c0_yaw), c0_offset, FrameId::camera_world(),
                     FrameId::lidar_world());
  data.true_scale = config.init_cloud_scale;

  // IMU streams; the clean stream defines the discrete ground truth.
  ImuSimParams clean = config.imu;
  clean.add_noise = false;
  data.imu_clean = simulate_imu(traj, traj_spec.imu_hz, clean, rng);
  if (config.imu.add_noise) {
    std::normal_distribution<double> n01(0.0, 1.0);
    const double sa = config.imu.noise.sigma_a * std::sqrt(traj_spec.imu_hz);
    const double sw = config.imu.noise.sigma_w * std::sqrt(traj_spec.imu_hz);
    data.imu = data.imu_clean;
    for (auto& s : data.imu) {
      s.accel += Vec3(n01(rng), n01(rng), n01(rng)) * sa;
      s.gyro += Vec3(n01(rng), n01(rng), n01(rng)) * sw;
    }
  } else {
    data.imu = data.imu_clean;
  }

  // Camera frames land exactly on IMU samples.
  const long imu_per_frame = std::lround(traj_spec.imu_hz / traj_spec.camera_hz);
  if (imu_per_frame < 1) throw InvalidSpec("imu rate below camera rate");
  for (size_t i = 0; i < data.imu_clean.size(); i += imu_per_frame) {
    data.frame_times.push_back(data.imu_clean[i].timestamp);
  }

  // Discrete ground truth: midpoint-integrate the clean stream from the
  // exact spline start state, recorded at frame samples.
  const Quat r_l_c0 = data.t_l_c0.rotation;
  ImuState gt;
  gt.q = (r_l_c0.conjugate() * traj.rotation(t0)).normalized();
  gt.p = r_l_c0.conjugate() * (traj.position(t0) - c0_offset);
  gt.v = r_l_c0.conjugate() * traj.velocity(t0);
  gt.bias = config.imu.true_bias;
  data.gravity_c0 = config.imu.gravity;  // yaw-only C0 keeps gravity vertical

  data.self_check_error = 0.0;
  size_t next_frame = 0;
  for (size_t i = 0; i < data.imu_clean.size(); ++i) {
    if (next_frame < data.frame_times.size() &&
        data.imu_clean[i].timestamp == data.frame_times[next_frame]) {
      data.gt_states_c0.push_back(gt);
      const Pose t_c0_ck(gt.q, gt.p, FrameId::camera(next_frame), FrameId::camera_world());
      data.gt_t_l_ck.push_back(data.t_l_c0.compose(t_c0_ck));
      const Vec3 spline_pos = traj.position(data.imu_clean[i].timestamp);
      data.self_check_error =
          std::max(data.self_check_error,
                   (data.gt_t_l_ck.back().translation - spline_pos).norm());
      ++next_frame;
    }
    if (i + 1 < data.imu_clean.size()) {
      const std::vector<ImuSample> pair{data.imu_clean[i], data.imu_clean[i + 1]};
      gt = propagate_state(gt, pair, data.gravity_c0);
      gt.bias = config.imu.true_bias;
    }
  }

  // Landmarks on surfaces, kept when observed often enough.
  double total_area = 0.0;
  for (const auto& s : data.scene.surfaces) total_area += s.area();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);

  const int frames = static_cast<int>(data.frame_times.size());
  int candidates = config.landmark_count * 6;
  while (static_cast<int>(data.landmarks.size()) < config.landmark_count && candidates-- > 0) {
    double pick = u01(rng) * total_area;
    size_t si = 0;
    for (; si + 1 < data.scene.surfaces.size(); ++si) {
      if (pick < data.scene.surfaces[si].area()) break;
      pick -= data.scene.surfaces[si].area();
    }
    const auto& s = data.scene.surfaces[si];
    // keep landmarks away from surface edges so local plane fits stay clean
    const Vec3 lm = s.at((0.1 + 0.8 * u01(rng)) * s.len_u, (0.1 + 0.8 * u01(rng)) * s.len_v);

    Track track;
    track.id = static_cast<int>(data.landmarks.size());
    double first_depth = 0.0;
    for (int f = 0; f < frames; ++f) {
      const Pose cam_to_world = data.gt_t_l_ck[f];
      const Vec3 in_cam = cam_to_world.inverse().act(lm);
      if (in_cam.z() < config.tracks.min_depth) continue;
      const Eigen::Vector2d px = config.intrinsics.project(in_cam);
      if (!config.intrinsics.in_image(px, 2.0)) continue;
      if (config.tracks.dropout_rate > 0.0 && u01(rng) < config.tracks.dropout_rate) continue;
      TrackObservation obs;
      obs.frame = f;
      obs.u = px.x() + config.tracks.pixel_sigma * (config.tracks.pixel_sigma > 0 ? n01(rng) : 0.0);
      obs.v = px.y() + config.tracks.pixel_sigma * (config.tracks.pixel_sigma > 0 ? n01(rng) : 0.0);
      if (track.observations.empty()) first_depth = in_cam.z();
      track.observations.push_back(obs);
    }
    if (static_cast<int>(track.observations.size()) < config.tracks.min_observations) continue;
    track.depth_init = first_depth;
    data.tracks.push_back(track);
    data.landmarks.push_back(lm);
    data.true_depths.push_back(first_depth);
  }

  // Up-to-scale feature cloud in C0 for initialization.
  const Pose world_to_c0 = data.t_l_c0.inverse();
  for (size_t i = 0; i < data.landmarks.size(); ++i) {
    FeaturePoint fp;
    fp.id = static_cast<int>(i);
    fp.point = world_to_c0.act(data.landmarks[i]) / data.true_scale;
    data.init_cloud.points.push_back(fp);
  }
  return data;
}

}  // namespace sim
}  // namespace palo
