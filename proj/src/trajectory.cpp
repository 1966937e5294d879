#include "palo/trajectory.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "palo/errors.hpp"

namespace palo {

Trajectory load_tum(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  Trajectory traj;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    TrajectoryEntry e;
    double qx, qy, qz, qw;
    if (!(ss >> e.t >> e.translation.x() >> e.translation.y() >> e.translation.z() >> qx >> qy >>
          qz >> qw)) {
      continue;
    }
    e.rotation = Quat(qw, qx, qy, qz).normalized();
    traj.push_back(e);
  }
  return traj;
}

void save_tum(const std::string& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "# timestamp tx ty tz qx qy qz qw\n";
  char buf[256];
  for (const auto& e : traj) {
    std::snprintf(buf, sizeof(buf), "%.9f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", e.t,
                  e.translation.x(), e.translation.y(), e.translation.z(), e.rotation.x(),
                  e.rotation.y(), e.rotation.z(), e.rotation.w());
    out << buf;
  }
}

Pose umeyama_alignment(const std::vector<Vec3>& source, const std::vector<Vec3>& target) {
  if (source.size() != target.size() || source.size() < 3) {
    throw InvalidSpec("alignment needs >= 3 paired points");
  }
  Eigen::Matrix3Xd src(3, source.size()), dst(3, target.size());
  for (size_t i = 0; i < source.size(); ++i) {
    src.col(i) = source[i];
    dst.col(i) = target[i];
  }
  const Eigen::Matrix4d m = Eigen::umeyama(src, dst, /*with_scaling=*/false);
  return Pose(Quat(Mat3(m.block<3, 3>(0, 0))), m.block<3, 1>(0, 3), FrameId::lidar_world(),
              FrameId::lidar_world());
}

AteReport evaluate_ate(const Trajectory& estimate, const Trajectory& ground_truth, bool align,
                       double match_tolerance) {
  if (estimate.empty() || ground_truth.empty()) throw NoOverlap();

  // Nearest ground-truth entry per estimate timestamp (both are sorted).
  std::vector<Vec3> est_pts, gt_pts;
  std::vector<double> stamps;
  size_t j = 0;
  for (const auto& e : estimate) {
    while (j + 1 < ground_truth.size() &&
           std::abs(ground_truth[j + 1].t - e.t) <= std::abs(ground_truth[j].t - e.t)) {
      ++j;
    }
    if (std::abs(ground_truth[j].t - e.t) <= match_tolerance) {
      est_pts.push_back(e.translation);
      gt_pts.push_back(ground_truth[j].translation);
      stamps.push_back(e.t);
    }
  }
  if (est_pts.size() < 2) throw NoOverlap();

  Pose correction = Pose::identity(FrameId::lidar_world());
  if (align && est_pts.size() >= 3) correction = umeyama_alignment(est_pts, gt_pts);

  AteReport report;
  report.matched = static_cast<int>(est_pts.size());
  report.timestamps = stamps;
  double sum_sq = 0.0, sum = 0.0;
  for (size_t i = 0; i < est_pts.size(); ++i) {
    const double err = (correction.act(est_pts[i]) - gt_pts[i]).norm();
    report.per_frame.push_back(err);
    sum_sq += err * err;
    sum += err;
    report.max = std::max(report.max, err);
  }
  report.rmse = std::sqrt(sum_sq / est_pts.size());
  report.mean = sum / est_pts.size();
  return report;
}

}  // namespace palo
