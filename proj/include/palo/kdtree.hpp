/**
 * @file kdtree.hpp
 * @brief Exact k-nearest-neighbor search over a static point set.
 *
 * Median-split kd-tree with contiguous node storage. Correctness is defined
 * by the linear-scan oracle in the tests, not by the split policy.
 */
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <vector>

namespace palo {

class KdTree {
 public:
  struct Hit {
    int index{-1};
    double dist_sq{0.0};
  };

  KdTree() = default;

  void build(const std::vector<Eigen::Vector3d>& points) {
    entries_.clear();
    nodes_.clear();
    const int n = static_cast<int>(points.size());
    if (n == 0) return;
    entries_.resize(n);
    for (int i = 0; i < n; ++i) entries_[i] = {points[i], i};
    nodes_.reserve(2 * n / kLeafSize + 4);
    build_node(0, n);
  }

  bool empty() const { return entries_.empty(); }
  int size() const { return static_cast<int>(entries_.size()); }

  /// Exact k nearest neighbors, ascending by (distance, original index).
  /// Returns min(k, size()) hits.
  void knn(const Eigen::Vector3d& query, int k, std::vector<Hit>& out) const {
    out.clear();
    if (empty() || k <= 0) return;
    k = std::min<int>(k, size());
    if (k > kMaxK) {
      linear_knn(query, k, out);
      return;
    }
    Best best;
    best.k = k;
    search(0, query, best);
    out.assign(best.hits, best.hits + best.count);
    std::sort(out.begin(), out.end(), hit_less);
  }

 private:
  static constexpr int kLeafSize = 8;
  static constexpr int kMaxK = 32;

  static bool hit_less(const Hit& a, const Hit& b) {
    return a.dist_sq != b.dist_sq ? a.dist_sq < b.dist_sq : a.index < b.index;
  }

  struct Entry {
    Eigen::Vector3d p;
    int id;
  };

  struct Node {
    double split{0.0};
    int dim{-1};  ///< -1 marks a leaf
    int left{-1}, right{-1};
    int begin{0}, end{0};
  };

  struct Best {
    Hit hits[kMaxK];
    int count{0};
    int k{0};

    double worst() const { return hits[count - 1].dist_sq; }
    bool full() const { return count == k; }

    void insert(int index, double dist_sq) {
      if (full() && dist_sq >= worst()) return;
      int pos = full() ? count - 1 : count++;
      while (pos > 0 && hits[pos - 1].dist_sq > dist_sq) {
        hits[pos] = hits[pos - 1];
        --pos;
      }
      hits[pos] = {index, dist_sq};
    }
  };

  void linear_knn(const Eigen::Vector3d& q, int k, std::vector<Hit>& out) const {
    out.resize(entries_.size());
    for (size_t i = 0; i < entries_.size(); ++i) {
      out[i] = {entries_[i].id, (entries_[i].p - q).squaredNorm()};
    }
    std::sort(out.begin(), out.end(), hit_less);
    out.resize(k);
  }

  int build_node(int begin, int end) {
    const int node_id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    nodes_.back().begin = begin;
    nodes_.back().end = end;
    if (end - begin <= kLeafSize) return node_id;

    Eigen::Vector3d lo = entries_[begin].p, hi = entries_[begin].p;
    for (int i = begin + 1; i < end; ++i) {
      lo = lo.cwiseMin(entries_[i].p);
      hi = hi.cwiseMax(entries_[i].p);
    }
    int dim;
    (hi - lo).maxCoeff(&dim);
    const int mid = begin + (end - begin) / 2;
    std::nth_element(entries_.begin() + begin, entries_.begin() + mid, entries_.begin() + end,
                     [dim](const Entry& a, const Entry& b) { return a.p[dim] < b.p[dim]; });

    const double split = entries_[mid].p[dim];
    const int left = build_node(begin, mid);
    const int right = build_node(mid, end);
    Node& node = nodes_[node_id];
    node.dim = dim;
    node.split = split;
    node.left = left;
    node.right = right;
    return node_id;
  }

  void search(int node_id, const Eigen::Vector3d& q, Best& best) const {
    const Node& node = nodes_[node_id];
    if (node.dim < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        best.insert(entries_[i].id, (entries_[i].p - q).squaredNorm());
      }
      return;
    }
    const double delta = q[node.dim] - node.split;
    const int near = delta < 0.0 ? node.left : node.right;
    const int far = delta < 0.0 ? node.right : node.left;
    search(near, q, best);
    if (!best.full() || delta * delta < best.worst()) search(far, q, best);
  }

  std::vector<Entry> entries_;
  std::vector<Node> nodes_;
};

}  // namespace palo
