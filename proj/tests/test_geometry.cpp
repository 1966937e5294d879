#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "palo/geometry.hpp"

using namespace palo;

namespace {

std::mt19937_64 rng(12345);

Vec3 random_vec(double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec3(u(rng), u(rng), u(rng));
}

Quat random_quat() {
  std::normal_distribution<double> n(0.0, 1.0);
  Quat q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  return q;
}

Pose random_pose(FrameId from, FrameId to, double scale = 2.0) {
  return Pose(random_quat(), random_vec(scale), from, to);
}

}  // namespace

TEST_CASE("skew matrix basics") {
  CHECK(skew(Vec3::Zero()).isZero(0.0));
  // cross-product identity on the canonical example
  const Vec3 v(1, 0, 0), w(0, 1, 0);
  CHECK((skew(v) * w - Vec3(0, 0, 1)).norm() == doctest::Approx(0.0));
  // randomized cross-product oracle
  for (int i = 0; i < 100; ++i) {
    const Vec3 a = random_vec(5.0), b = random_vec(5.0);
    CHECK((skew(a) * b - a.cross(b)).norm() < 1e-12);
  }
}

TEST_CASE("pose compose / inverse / act") {
  const FrameId A = FrameId::camera(0), B = FrameId::camera(1), L = FrameId::lidar_world();

  SUBCASE("identity composes neutrally") {
    const Pose p = random_pose(A, L);
    const Pose id = Pose::identity(L);
    const Pose q = id.compose(p);
    CHECK(rotation_angle(q.rotation, p.rotation) < 1e-12);
    CHECK((q.translation - p.translation).norm() < 1e-12);
  }

  SUBCASE("inverse round trip is identity") {
    for (int i = 0; i < 50; ++i) {
      const Pose p = random_pose(A, L);
      const Pose r = p.inverse().compose(p);
      CHECK(rotation_angle(r.rotation, Quat::Identity()) < 1e-9);
      CHECK(r.translation.norm() < 1e-9);
      const Point3 x(random_vec(3.0), A);
      const Point3 back = p.inverse().act(p.act(x));
      CHECK((back.coords - x.coords).norm() < 1e-9);
      CHECK(back.frame == A);
    }
  }

  SUBCASE("frame tags are enforced") {
    const Pose p = random_pose(A, L);
    const Pose q = random_pose(B, L);
    CHECK_THROWS_AS(p.compose(q), FrameMismatch);
    CHECK_THROWS_AS(p.act(Point3(Vec3::Zero(), B)), FrameMismatch);
  }

  SUBCASE("chain of 100 composes matches homogeneous-matrix oracle") {
    Pose chain = Pose::identity(FrameId::camera(0));
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    for (int i = 0; i < 100; ++i) {
      const Pose step = random_pose(FrameId::camera(i + 1), FrameId::camera(i), 1.0);
      chain = chain.compose(step);
      m = m * step.matrix();
    }
    CHECK((chain.matrix() - m).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(chain.rotation.norm() - 1.0) < 1e-9);
  }

  SUBCASE("quaternion-matrix round trip") {
    for (int i = 0; i < 100; ++i) {
      const Quat q = random_quat();
      const Quat back(q.toRotationMatrix());
      CHECK(rotation_angle(q, back) < 1e-9);
    }
  }
}

TEST_CASE("fit_plane exact planes") {
  const FrameId L = FrameId::lidar_world();

  SUBCASE("z = 1 with unit square corners") {
    std::vector<Point3> pts = {
        {{0, 0, 1}, L}, {{1, 0, 1}, L}, {{0, 1, 1}, L}, {{1, 1, 1}, L}, {{0.5, 0.5, 1}, L}};
    const PlaneHN p = fit_plane(pts);
    CHECK(std::abs(std::abs(p.normal.z()) - 1.0) < 1e-9);
    CHECK(std::abs(p.normal.z() * 1.0 + p.d) < 1e-9);  // n.x + d = 0 on-plane
    CHECK(p.fit_rms < 1e-9);
    CHECK(p.valid);
    // convention: non-positive offset
    CHECK(p.d <= 0.0);
  }

  SUBCASE("x + y + z = 3") {
    std::vector<Point3> pts = {
        {{3, 0, 0}, L}, {{0, 3, 0}, L}, {{0, 0, 3}, L}, {{1, 1, 1}, L}, {{2, 0.5, 0.5}, L}};
    const PlaneHN p = fit_plane(pts);
    const Vec3 expect = Vec3(1, 1, 1).normalized();
    const double sign = p.normal.dot(expect) > 0 ? 1.0 : -1.0;
    CHECK((p.normal - sign * expect).norm() < 1e-9);
    CHECK(std::abs(p.d - (-sign * std::sqrt(3.0))) < 1e-9);
    CHECK(p.fit_rms < 1e-9);
  }

  SUBCASE("collinear points are degenerate") {
    std::vector<Point3> pts = {{{0, 0, 0}, L}, {{1, 1, 1}, L}, {{2, 2, 2}, L}, {{3, 3, 3}, L}};
    CHECK_THROWS_AS(fit_plane(pts), DegenerateGeometry);
  }

  SUBCASE("mixed frames rejected") {
    std::vector<Point3> pts = {{{0, 0, 1}, L}, {{1, 0, 1}, FrameId::camera_world()},
                               {{0, 1, 1}, L}};
    CHECK_THROWS_AS(fit_plane(pts), FrameMismatch);
  }

  SUBCASE("plane through the origin falls back to the eigen path") {
    std::vector<Point3> pts = {
        {{1, 0, 0}, L}, {{0, 1, 0}, L}, {{-1, 0, 0}, L}, {{0, -1, 0}, L}, {{0.3, 0.4, 0}, L}};
    const PlaneHN p = fit_plane(pts);
    CHECK(p.eigen_path);
    CHECK(std::abs(std::abs(p.normal.z()) - 1.0) < 1e-9);
    CHECK(std::abs(p.d) < 1e-9);
    CHECK(p.fit_rms < 1e-9);
  }
}

// SVD total-least-squares oracle: plane minimizing orthogonal distances.
static PlaneHN tls_plane_oracle(const std::vector<Vec3>& pts) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Eigen::MatrixXd a(pts.size(), 3);
  for (size_t i = 0; i < pts.size(); ++i) a.row(i) = (pts[i] - c).transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
  PlaneHN out;
  out.normal = svd.matrixV().col(2);
  out.d = -out.normal.dot(c);
  return out;
}

TEST_CASE("fit_plane vs total-least-squares oracle on noisy planes") {
  std::normal_distribution<double> noise(0.0, 0.01);
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Quat q = random_quat();
    const Vec3 n_true = q * Vec3::UnitZ();
    // The A/D parameterization is singular for planes through the origin, so
    // keep the sampled plane offset bounded away from it.
    Vec3 center = random_vec(3.0);
    if (std::abs(n_true.dot(center)) < 1.5) {
      center += n_true * (n_true.dot(center) >= 0 ? 2.0 : -2.0);
    }
    std::vector<Vec3> pts;
    std::vector<Point3> tagged;
    for (int i = 0; i < 50; ++i) {
      std::uniform_real_distribution<double> u(-0.6, 0.6);
      const Vec3 in_plane = q * Vec3(u(rng), u(rng), 0.0);
      Vec3 p = center + in_plane + n_true * noise(rng);
      pts.push_back(p);
      tagged.emplace_back(p, FrameId::lidar_world());
    }
    const PlaneHN fitted = fit_plane(tagged);
    const PlaneHN oracle = tls_plane_oracle(pts);
    const double angle_to_truth =
        std::acos(std::min(1.0, std::abs(fitted.normal.dot(n_true))));
    const double angle_to_oracle =
        std::acos(std::min(1.0, std::abs(fitted.normal.dot(oracle.normal))));
    CHECK(angle_to_truth < 2.0 * M_PI / 180.0);
    CHECK(angle_to_oracle < 0.5 * M_PI / 180.0);
    CHECK(fitted.fit_rms <= 0.02);
    ++checked;
  }
  CHECK(checked == 50);
}

TEST_CASE("point to plane distance") {
  PlaneHN plane;  // z = 1 with d <= 0 convention: n = (0,0,1), d = -1
  plane.normal = Vec3(0, 0, 1);
  plane.d = -1.0;

  CHECK(point_to_plane_distance(Vec3(0, 0, 1), plane) == doctest::Approx(0.0));
  CHECK(point_to_plane_distance(Vec3(0, 0, 2), plane) == doctest::Approx(1.0));

  SUBCASE("matches the orthogonal-projection construction") {
    for (int i = 0; i < 100; ++i) {
      const Quat q = random_quat();
      PlaneHN pl;
      pl.normal = q * Vec3::UnitZ();
      pl.d = std::uniform_real_distribution<double>(-5.0, 5.0)(rng);
      const Vec3 p = random_vec(5.0);
      // project p onto the plane explicitly, then measure
      const Vec3 foot = p - (pl.normal.dot(p) + pl.d) * pl.normal;
      CHECK(std::abs(pl.normal.dot(foot) + pl.d) < 1e-9);
      CHECK(std::abs(point_to_plane_distance(p, pl) - (p - foot).norm()) < 1e-9);
    }
  }
}

TEST_CASE("plane fit and distance are rigid-transform invariant") {
  // Exactly planar inputs: the algebraic fit is then frame-independent.
  for (int trial = 0; trial < 25; ++trial) {
    const Quat q = random_quat();
    const Vec3 center = random_vec(2.0) + Vec3(3, 0, 0);
    std::vector<Point3> pts;
    for (int i = 0; i < 20; ++i) {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      pts.emplace_back(center + q * Vec3(u(rng), u(rng), 0.0), FrameId::lidar_world());
    }
    const PlaneHN before = fit_plane(pts);
    CHECK(before.fit_rms < 1e-9);

    const Pose T = random_pose(FrameId::lidar_world(), FrameId::camera_world(), 3.0);
    std::vector<Point3> moved;
    for (const auto& p : pts) moved.push_back(T.act(p));
    const PlaneHN after = fit_plane(moved);
    const PlaneHN expected = transform_plane(T, before);

    const double sign = after.normal.dot(expected.normal) > 0 ? 1.0 : -1.0;
    CHECK((after.normal - sign * expected.normal).norm() < 1e-6);
    CHECK(std::abs(after.d - sign * expected.d) < 1e-6);

    const Point3 probe(random_vec(4.0), FrameId::lidar_world());
    CHECK(std::abs(point_to_plane_distance(T.act(probe), transform_plane(T, before)) -
                   point_to_plane_distance(probe, before)) < 1e-9);
  }
}
