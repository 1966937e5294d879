#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <random>

#include "palo/cloud_io.hpp"
#include "palo/lidar_map.hpp"

using namespace palo;

namespace {

std::mt19937_64 rng(777);

Vec3 random_vec(double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec3(u(rng), u(rng), u(rng));
}

// Brute-force k-NN oracle.
std::vector<std::pair<int, double>> linear_knn(const std::vector<Vec3>& pts, const Vec3& q,
                                               int k) {
  std::vector<std::pair<int, double>> all;
  for (size_t i = 0; i < pts.size(); ++i)
    all.emplace_back(static_cast<int>(i), (pts[i] - q).norm());
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  all.resize(std::min<size_t>(k, all.size()));
  return all;
}

std::vector<Vec3> make_wall(double x0, double x1, double y0, double y1, double z, double step) {
  std::vector<Vec3> pts;
  for (double x = x0; x <= x1 + 1e-9; x += step) {
    for (double y = y0; y <= y1 + 1e-9; y += step) {
      pts.emplace_back(x, y, z);
    }
  }
  return pts;
}

}  // namespace

TEST_CASE("knn matches linear-scan oracle") {
  SUBCASE("single point map") {
    LidarMap map;
    map.insert_points({Vec3(1, 2, 3)});
    const auto res = map.snapshot()->knn(Point3(Vec3(0, 0, 0), FrameId::lidar_world()), 5);
    REQUIRE(res.size() == 1);
    CHECK(res[0].second == doctest::Approx(Vec3(1, 2, 3).norm()));
  }

  SUBCASE("grid node has itself plus axis neighbors") {
    std::vector<Vec3> pts;
    for (int x = 0; x < 5; ++x)
      for (int y = 0; y < 5; ++y)
        for (int z = 0; z < 5; ++z) pts.emplace_back(x, y, z);
    LidarMap map;
    map.insert_points(pts);
    const auto res = map.snapshot()->knn(Point3(Vec3(2, 2, 2), FrameId::lidar_world()), 5);
    REQUIRE(res.size() == 5);
    CHECK(res[0].second == doctest::Approx(0.0));
    for (int i = 1; i < 5; ++i) CHECK(res[i].second == doctest::Approx(1.0));
  }

  SUBCASE("10k random points, 100 random queries") {
    std::vector<Vec3> pts;
    for (int i = 0; i < 10000; ++i) pts.push_back(random_vec(10.0));
    LidarMap map;
    map.insert_points(pts);
    const auto snap = map.snapshot();
    std::vector<KdTree::Hit> hits;
    for (int t = 0; t < 100; ++t) {
      const Vec3 q = random_vec(12.0);
      const int k = 1 + static_cast<int>(rng() % 10);
      snap->knn_raw(q, k, hits);
      const auto oracle = linear_knn(pts, q, k);
      REQUIRE(hits.size() == oracle.size());
      for (size_t i = 0; i < hits.size(); ++i) {
        CHECK(std::sqrt(hits[i].dist_sq) == doctest::Approx(oracle[i].second).epsilon(1e-12));
      }
    }
  }

  SUBCASE("pending buffer is probed before rebuild") {
    std::vector<Vec3> pts;
    for (int i = 0; i < 2000; ++i) pts.push_back(random_vec(5.0));
    LidarMap map;
    map.insert_points(pts);
    // Small insert stays in the pending buffer (< 20% of tree size).
    std::vector<Vec3> extra;
    for (int i = 0; i < 100; ++i) extra.push_back(random_vec(5.0));
    map.insert_points(extra);
    auto all = pts;
    all.insert(all.end(), extra.begin(), extra.end());
    const auto snap = map.snapshot();
    std::vector<KdTree::Hit> hits;
    for (int t = 0; t < 50; ++t) {
      const Vec3 q = random_vec(6.0);
      snap->knn_raw(q, 5, hits);
      const auto oracle = linear_knn(all, q, 5);
      for (size_t i = 0; i < hits.size(); ++i) {
        CHECK(std::sqrt(hits[i].dist_sq) == doctest::Approx(oracle[i].second).epsilon(1e-12));
      }
    }
  }

  SUBCASE("empty map throws") {
    LidarMap map;
    CHECK_THROWS_AS(map.snapshot()->knn(Point3(Vec3::Zero(), FrameId::lidar_world()), 1),
                    EmptyMap);
  }
}

TEST_CASE("insert_scan semantics") {
  SUBCASE("identity insertion tags points as world") {
    std::vector<Point3> scan;
    for (int i = 0; i < 1000; ++i) scan.emplace_back(random_vec(4.0), FrameId::lidar_scan(0));
    LidarMap map;
    map.insert_scan(scan, Pose(Quat::Identity(), Vec3::Zero(), FrameId::lidar_scan(0),
                               FrameId::lidar_world()));
    CHECK(map.size() == 1000);
    CHECK(map.generation() == 1);
    // self-query returns distance zero
    const auto res = map.snapshot()->knn(Point3(scan[17].coords, FrameId::lidar_world()), 1);
    CHECK(res[0].second == doctest::Approx(0.0));
  }

  SUBCASE("empty scan is a no-op") {
    LidarMap map;
    map.insert_scan({}, Pose::identity(FrameId::lidar_world()));
    CHECK(map.empty());
    CHECK(map.generation() == 0);
  }

  SUBCASE("pruning removes far points") {
    LidarMap map(10.0);
    std::vector<Point3> scan;
    scan.emplace_back(Vec3(1, 0, 0), FrameId::lidar_scan(0));
    scan.emplace_back(Vec3(50, 0, 0), FrameId::lidar_scan(0));
    map.insert_scan(scan, Pose(Quat::Identity(), Vec3::Zero(), FrameId::lidar_scan(0),
                               FrameId::lidar_world()));
    CHECK(map.size() == 1);

    // Move the sensor: previously kept points outside the radius drop out.
    std::vector<Point3> scan2;
    scan2.emplace_back(Vec3(0, 0, 0), FrameId::lidar_scan(1));
    map.insert_scan(scan2, Pose(Quat::Identity(), Vec3(9, 0, 0), FrameId::lidar_scan(1),
                                FrameId::lidar_world()));
    const Vec3 sensor(9, 0, 0);
    for (const auto& p : map.snapshot()->points()) {
      CHECK((p - sensor).norm() <= map.prune_radius() + 1e-12);
    }
  }

  SUBCASE("two scans of one synthetic wall coincide") {
    const auto wall = make_wall(-2, 2, -2, 2, 0.0, 0.1);
    const Pose t1(yaw_quat(0.3), Vec3(0.5, 0.2, 1.0), FrameId::lidar_scan(0),
                  FrameId::lidar_world());
    const Pose t2(yaw_quat(-0.2), Vec3(-0.3, 0.4, 1.5), FrameId::lidar_scan(1),
                  FrameId::lidar_world());
    std::vector<Point3> scan1, scan2;
    for (const auto& w : wall) {
      scan1.emplace_back(t1.inverse().act(w), FrameId::lidar_scan(0));
      scan2.emplace_back(t2.inverse().act(w), FrameId::lidar_scan(1));
    }
    LidarMap map;
    map.insert_scan(scan1, t1);
    map.insert_scan(scan2, t2);
    CHECK(map.generation() == 2);
    // Every wall point appears from both scans: second-nearest is coincident.
    const auto snap = map.snapshot();
    std::vector<KdTree::Hit> hits;
    for (size_t i = 0; i < wall.size(); i += 37) {
      snap->knn_raw(wall[i], 2, hits);
      CHECK(hits[1].dist_sq < 1e-18);
    }
  }

  SUBCASE("frame mismatch rejected") {
    LidarMap map;
    std::vector<Point3> scan{Point3(Vec3::Zero(), FrameId::lidar_scan(3))};
    CHECK_THROWS_AS(map.insert_scan(scan, Pose(Quat::Identity(), Vec3::Zero(),
                                               FrameId::lidar_scan(0), FrameId::lidar_world())),
                    FrameMismatch);
  }
}

TEST_CASE("associate_features") {
  // Dense synthetic wall z = 1 with known plane.
  const auto wall = make_wall(-3, 3, -3, 3, 1.0, 0.05);
  LidarMap map;
  map.insert_points(wall);
  const auto snap = map.snapshot();

  SUBCASE("feature on the wall associates tightly") {
    std::vector<Point3> feats{Point3(Vec3(0.51, -0.52, 1.0), FrameId::lidar_world())};
    const auto assoc = associate_features(*snap, feats);
    REQUIRE(assoc.size() == 1);
    CHECK(assoc[0].valid);
    CHECK(std::abs(assoc[0].signed_distance) <= 1e-3);
    CHECK(assoc[0].neighbor_count == 5);
  }

  SUBCASE("feature far off any surface is invalid") {
    std::vector<Point3> feats{Point3(Vec3(0, 0, 2.0), FrameId::lidar_world())};
    const auto assoc = associate_features(*snap, feats);
    CHECK_FALSE(assoc[0].valid);
  }

  SUBCASE("empty feature list yields empty associations") {
    CHECK(associate_features(*snap, {}).empty());
  }

  SUBCASE("deterministic for fixed generation and features") {
    std::vector<Point3> feats;
    for (int i = 0; i < 20; ++i)
      feats.emplace_back(random_vec(2.0) + Vec3(0, 0, 1), FrameId::lidar_world());
    const auto a = associate_features(*snap, feats);
    const auto b = associate_features(*snap, feats);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].valid == b[i].valid);
      CHECK(a[i].signed_distance == b[i].signed_distance);
    }
  }
}

TEST_CASE("evaluate_candidate") {
  // Room-like shell: floor plus two walls, densely sampled.
  std::vector<Vec3> shell = make_wall(-3, 3, -3, 3, 0.0, 0.08);
  for (double x = -3; x <= 3; x += 0.08) {
    for (double z = 0; z <= 2.5; z += 0.08) {
      shell.emplace_back(x, -3.0, z);
      shell.emplace_back(x, 3.0, z);
    }
  }
  LidarMap map;
  map.insert_points(shell);
  const auto snap = map.snapshot();

  // Features on the surfaces, expressed in a C0 frame offset by the truth.
  SampleCandidate truth;
  truth.position = Vec3(0.4, -0.3, 0.2);
  truth.yaw = 0.35;
  truth.scale = 1.0;
  const Pose t_lc0 = truth.pose(FrameId::camera_world(), FrameId::lidar_world());

  FeatureCloud cloud;
  std::uniform_real_distribution<double> u(-2.5, 2.5);
  for (int i = 0; i < 40; ++i) {
    Vec3 on_surface;
    if (i % 3 == 0) on_surface = Vec3(u(rng), u(rng), 0.0);
    else if (i % 3 == 1) on_surface = Vec3(u(rng), -3.0, 0.3 + 0.4 * (i % 5));
    else on_surface = Vec3(u(rng), 3.0, 0.3 + 0.4 * (i % 5));
    FeaturePoint fp;
    fp.id = i;
    fp.point = t_lc0.inverse().act(Point3(on_surface, FrameId::lidar_world())).coords;
    cloud.points.push_back(fp);
  }

  SUBCASE("truth candidate matches everything") {
    const auto score = evaluate_candidate(*snap, cloud, truth);
    CHECK(score.tfn == 40);
    CHECK(score.vfn == 40);
    CHECK(score.mean_valid_distance < 1e-6);
  }

  SUBCASE("displaced candidate loses all matches") {
    // Floor-only scene: displacement normal to the only surface drops every
    // feature into free space (in-plane displacement would be invisible to
    // an infinite-plane association).
    LidarMap floor_map;
    floor_map.insert_points(make_wall(-3, 3, -3, 3, 0.0, 0.08));
    FeatureCloud floor_cloud;
    for (int i = 0; i < 20; ++i) {
      FeaturePoint fp;
      fp.id = i;
      fp.point = t_lc0.inverse().act(Point3(Vec3(u(rng), u(rng), 0.0), FrameId::lidar_world()))
                     .coords;
      floor_cloud.points.push_back(fp);
    }
    SampleCandidate off = truth;
    off.position += Vec3(0, 0, 2.0);
    const auto at_truth = evaluate_candidate(*floor_map.snapshot(), floor_cloud, truth);
    const auto score = evaluate_candidate(*floor_map.snapshot(), floor_cloud, off);
    CHECK(at_truth.vfn == 20);
    CHECK(score.vfn == 0);
  }

  SUBCASE("halved scale scores strictly worse") {
    SampleCandidate half = truth;
    half.scale = 0.5;
    const auto at_truth = evaluate_candidate(*snap, cloud, truth);
    const auto at_half = evaluate_candidate(*snap, cloud, half);
    CHECK(at_half.vfn < at_truth.vfn);
  }

  SUBCASE("vfn monotone in the match threshold") {
    AssociationParams loose, tight;
    loose.valid_match_threshold = 0.10;
    tight.valid_match_threshold = 0.02;
    SampleCandidate near_truth = truth;
    near_truth.position += Vec3(0.02, -0.015, 0.01);
    const auto l = evaluate_candidate(*snap, cloud, near_truth, loose);
    const auto t = evaluate_candidate(*snap, cloud, near_truth, tight);
    CHECK(t.vfn <= l.vfn);
  }
}

TEST_CASE("cloud file round trips") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 100; ++i) pts.push_back(random_vec(8.0));

  SUBCASE("ply") {
    const std::string path = "/tmp/palo_test_cloud.ply";
    save_cloud_ply(path, pts);
    const auto back = load_cloud(path);
    REQUIRE(back.size() == pts.size());
    for (size_t i = 0; i < pts.size(); ++i) CHECK((back[i] - pts[i]).norm() < 1e-5);
    std::remove(path.c_str());
  }

  SUBCASE("csv with comments and blank lines") {
    const std::string path = "/tmp/palo_test_cloud.csv";
    save_cloud_csv(path, pts);
    const auto back = load_cloud(path);
    REQUIRE(back.size() == pts.size());
    for (size_t i = 0; i < pts.size(); ++i) CHECK((back[i] - pts[i]).norm() < 1e-5);
    std::remove(path.c_str());
  }
}
