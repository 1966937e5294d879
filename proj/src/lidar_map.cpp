#include "palo/lidar_map.hpp"

#include <algorithm>
#include <cmath>

namespace palo {

std::vector<std::pair<Point3, double>> MapSnapshot::knn(const Point3& query, int k) const {
  if (query.frame != FrameId::lidar_world()) {
    throw FrameMismatch("map query must be in LidarWorld, got " + query.frame.str());
  }
  if (empty()) throw EmptyMap();
  std::vector<KdTree::Hit> hits;
  knn_raw(query.coords, k, hits);
  std::vector<std::pair<Point3, double>> out;
  out.reserve(hits.size());
  for (const auto& h : hits) {
    out.emplace_back(Point3(points_[h.index], FrameId::lidar_world()), std::sqrt(h.dist_sq));
  }
  return out;
}

void MapSnapshot::knn_raw(const Vec3& query, int k, std::vector<KdTree::Hit>& out) const {
  tree_.knn(query, k, out);
  // Pending points live past tree_count_ and are probed linearly.
  if (tree_count_ < size()) {
    for (int i = tree_count_; i < size(); ++i) {
      out.push_back({i, (points_[i] - query).squaredNorm()});
    }
    std::sort(out.begin(), out.end(), [](const KdTree::Hit& a, const KdTree::Hit& b) {
      return a.dist_sq != b.dist_sq ? a.dist_sq < b.dist_sq : a.index < b.index;
    });
    if (static_cast<int>(out.size()) > k) out.resize(k);
  }
}

void LidarMap::insert_scan(const std::vector<Point3>& scan, const Pose& sensor_pose) {
  if (scan.empty()) return;
  if (sensor_pose.to != FrameId::lidar_world()) {
    throw FrameMismatch("sensor pose must map into LidarWorld");
  }
  const MapSnapshot& cur = *snapshot_;
  std::vector<Vec3> pts;
  pts.reserve(cur.points_.size() + scan.size());

  const Vec3 sensor_pos = sensor_pose.translation;
  const bool prune = prune_radius_ > 0.0;
  const double r2 = prune_radius_ * prune_radius_;

  int kept_old = 0;
  int kept_tree = 0;
  for (int i = 0; i < cur.size(); ++i) {
    const Vec3& p = cur.points_[i];
    if (prune && (p - sensor_pos).squaredNorm() > r2) continue;
    pts.push_back(p);
    ++kept_old;
    if (i < cur.tree_count_) ++kept_tree;
  }
  const bool pruned_any = kept_old != cur.size();

  for (const auto& sp : scan) {
    if (sp.frame != sensor_pose.from) {
      throw FrameMismatch("scan point in " + sp.frame.str() + ", pose maps " +
                          sensor_pose.from.str());
    }
    const Vec3 w = sensor_pose.act(sp.coords);
    if (!w.allFinite()) continue;
    if (prune && (w - sensor_pos).squaredNorm() > r2) continue;
    pts.push_back(w);
  }

  // Pruning invalidates tree indices, so it forces a rebuild; otherwise the
  // old tree stays and the new points ride in the pending buffer until they
  // exceed the rebuild fraction.
  commit(std::move(pts), pruned_any ? 0 : kept_tree);
}

void LidarMap::insert_points(const std::vector<Vec3>& world_points) {
  if (world_points.empty()) return;
  const MapSnapshot& cur = *snapshot_;
  std::vector<Vec3> pts = cur.points_;
  pts.reserve(pts.size() + world_points.size());
  for (const auto& p : world_points) {
    if (p.allFinite()) pts.push_back(p);
  }
  commit(std::move(pts), cur.tree_count_);
}

void LidarMap::commit(std::vector<Vec3> all_points, int keep_tree_count) {
  auto next = std::make_shared<MapSnapshot>();
  next->points_ = std::move(all_points);
  next->generation_ = snapshot_->generation_ + 1;

  const int total = next->size();
  const int pending = total - keep_tree_count;
  if (keep_tree_count > 0 && pending <= static_cast<int>(kRebuildFraction * keep_tree_count)) {
    next->tree_ = snapshot_->tree_;
    next->tree_count_ = keep_tree_count;
  } else {
    next->tree_.build(next->points_);
    next->tree_count_ = total;
  }
  snapshot_ = std::move(next);
}

std::vector<PlaneAssociation> associate_features(const MapSnapshot& map,
                                                 const std::vector<Point3>& features,
                                                 const AssociationParams& params) {
  if (map.empty()) throw EmptyMap();
  std::vector<PlaneAssociation> out;
  out.reserve(features.size());
  std::vector<KdTree::Hit> hits;
  std::vector<Vec3> neighbors;
  for (size_t i = 0; i < features.size(); ++i) {
    PlaneAssociation assoc;
    assoc.feature_id = static_cast<int>(i);
    const Vec3& f = features[i].coords;
    map.knn_raw(f, params.neighbor_count, hits);
    assoc.neighbor_count = static_cast<int>(hits.size());
    if (assoc.neighbor_count >= 3) {
      neighbors.clear();
      for (const auto& h : hits) neighbors.push_back(map.points()[h.index]);
      try {
        assoc.plane = fit_plane_raw(neighbors, params.plane_fit_threshold);
        assoc.signed_distance = point_to_plane_signed(f, assoc.plane);
        assoc.valid = assoc.plane.valid &&
                      std::abs(assoc.signed_distance) <= params.valid_match_threshold;
      } catch (const DegenerateGeometry&) {
        assoc.valid = false;
      }
    }
    out.push_back(assoc);
  }
  return out;
}

AssociationScore evaluate_candidate(const MapSnapshot& map, const FeatureCloud& cloud,
                                    const SampleCandidate& candidate,
                                    const AssociationParams& params) {
  if (map.empty()) throw EmptyMap();
  AssociationScore score;
  score.tfn = cloud.size();

  // Inlined association loop; avoids materializing the transferred cloud.
  const Quat rot = candidate.rotation();
  std::vector<KdTree::Hit> hits;
  std::vector<Vec3> neighbors;
  double dist_sum = 0.0;
  for (const auto& fp : cloud.points) {
    const Vec3 f = rot * (candidate.scale * fp.point) + candidate.position;
    map.knn_raw(f, params.neighbor_count, hits);
    if (static_cast<int>(hits.size()) < 3) continue;
    neighbors.clear();
    for (const auto& h : hits) neighbors.push_back(map.points()[h.index]);
    try {
      const PlaneHN plane = fit_plane_raw(neighbors, params.plane_fit_threshold);
      if (!plane.valid) continue;
      const double sd = point_to_plane_signed(f, plane);
      if (std::abs(sd) <= params.valid_match_threshold) {
        ++score.vfn;
        dist_sum += std::abs(sd);
      }
    } catch (const DegenerateGeometry&) {
    }
  }
  if (score.vfn > 0) score.mean_valid_distance = dist_sum / score.vfn;
  return score;
}

}  // namespace palo
