/**
 * @file lidar_map.hpp
 * @brief Dense world-frame point map: k-NN search, scan insertion with
 *        distance pruning, and feature-to-plane association/evaluation.
 *
 * The map follows snapshot semantics: mutation produces a new immutable
 * generation; readers hold a frozen snapshot that is safe to share across
 * threads and agents.
 */
#pragma once

#include <memory>
#include <vector>

#include "palo/feature_cloud.hpp"
#include "palo/geometry.hpp"
#include "palo/kdtree.hpp"
#include "palo/sampling.hpp"

namespace palo {

/// Thresholds for feature-plane association.
struct AssociationParams {
  int neighbor_count{5};              ///< LiDAR points per local plane fit
  double plane_fit_threshold{0.10};   ///< m, plane validity gate
  double valid_match_threshold{0.10}; ///< m, |signed distance| gate
};

/// Local plane matched to one feature.
struct PlaneAssociation {
  int feature_id{0};
  PlaneHN plane;
  int neighbor_count{0};
  double signed_distance{0.0};
  bool valid{false};
};

/// Aggregate association quality of one candidate pose.
struct AssociationScore {
  int vfn{0};                         ///< valid feature number
  int tfn{0};                         ///< total feature number
  double mean_valid_distance{0.0};    ///< mean |signed distance| over valid matches
  double neighborhood_variance{0.0};  ///< filled by the owner of the 3x3x3 blocks
};

/// Immutable map generation. k-NN answers combine the built tree with a
/// linearly probed pending buffer, so results are exact at any time.
class MapSnapshot {
 public:
  MapSnapshot() = default;

  uint64_t generation() const { return generation_; }
  bool empty() const { return points_.empty(); }
  int size() const { return static_cast<int>(points_.size()); }
  const std::vector<Vec3>& points() const { return points_; }

  /// Exact k nearest neighbors in non-decreasing distance order.
  /// Throws EmptyMap on an empty snapshot.
  std::vector<std::pair<Point3, double>> knn(const Point3& query, int k) const;

  /// Raw variant for hot paths: fills squared-distance hits.
  void knn_raw(const Vec3& query, int k, std::vector<KdTree::Hit>& out) const;

 private:
  friend class LidarMap;
  std::vector<Vec3> points_;   ///< frame LidarWorld
  KdTree tree_;                ///< over points_[0, tree_count_)
  int tree_count_{0};
  uint64_t generation_{0};
};

using MapSnapshotPtr = std::shared_ptr<const MapSnapshot>;

/// Growable map handle. Single writer; snapshots serve many readers.
class LidarMap {
 public:
  explicit LidarMap(double prune_radius = 60.0) : prune_radius_(prune_radius) {
    snapshot_ = std::make_shared<MapSnapshot>();
  }

  /// Transforms a scan into LidarWorld, inserts it, prunes points farther
  /// than prune_radius from the sensor position, and bumps the generation.
  /// Empty scans are no-ops. Non-finite points are dropped.
  void insert_scan(const std::vector<Point3>& scan, const Pose& sensor_pose);

  /// Inserts world-frame points directly (map bootstrap from file).
  void insert_points(const std::vector<Vec3>& world_points);

  MapSnapshotPtr snapshot() const { return snapshot_; }
  uint64_t generation() const { return snapshot_->generation(); }
  bool empty() const { return snapshot_->empty(); }
  int size() const { return snapshot_->size(); }
  double prune_radius() const { return prune_radius_; }
  void set_prune_radius(double r) { prune_radius_ = r; }

 private:
  void commit(std::vector<Vec3> all_points, int keep_tree_count);

  MapSnapshotPtr snapshot_;
  double prune_radius_{60.0};
  // Bulk rebuild once pending insertions exceed this fraction of tree size.
  static constexpr double kRebuildFraction = 0.20;
};

/// For each feature (already in LidarWorld): fit a plane to its k nearest
/// map points and gate by signed distance. Degenerate fits yield valid =
/// false rather than an error. Throws EmptyMap.
std::vector<PlaneAssociation> associate_features(const MapSnapshot& map,
                                                 const std::vector<Point3>& features,
                                                 const AssociationParams& params = {});

/// Transfers every feature by the candidate (yaw/scale transfer), associates
/// against the map, and aggregates counts. neighborhood_variance is left 0;
/// the multi-level sampler that owns the 3x3x3 block structure fills it.
AssociationScore evaluate_candidate(const MapSnapshot& map, const FeatureCloud& cloud,
                                    const SampleCandidate& candidate,
                                    const AssociationParams& params = {});

}  // namespace palo
