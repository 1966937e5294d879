#include "palo/init_sampler.hpp"

#include <algorithm>
#include <cmath>

#include "palo/errors.hpp"

namespace palo {

FeatureCloud remove_outliers(const FeatureCloud& cloud) {
  if (cloud.size() < 3) return cloud;
  Vec3 centroid = Vec3::Zero();
  for (const auto& fp : cloud.points) centroid += fp.point;
  centroid /= cloud.size();

  std::vector<double> dist(cloud.points.size());
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    dist[i] = (cloud.points[i].point - centroid).norm();
  }
  auto median_of = [](std::vector<double> v) {
    const size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    return v[mid];
  };
  const double med = median_of(dist);
  std::vector<double> dev(dist.size());
  for (size_t i = 0; i < dist.size(); ++i) dev[i] = std::abs(dist[i] - med);
  const double mad = median_of(dev);
  // Robust three-sigma gate: MAD scaled by the Gaussian consistency factor.
  const double gate = 3.0 * 1.4826 * mad + 1e-12;

  FeatureCloud out;
  out.frame = cloud.frame;
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    if (std::abs(dist[i] - med) <= gate) out.points.push_back(cloud.points[i]);
  }
  return out;
}

namespace {

struct GridScores {
  std::vector<double> xs, ys, zs, yaws, scales;
  std::vector<int> vfn;      // flat [ix][iy][iz][iyaw][iscale]
  std::vector<double> dist;  // mean valid distance per cell
  std::vector<double> var;   // 3x3x3 position-neighborhood vfn variance

  size_t idx(size_t ix, size_t iy, size_t iz, size_t iw, size_t is) const {
    return (((ix * ys.size() + iy) * zs.size() + iz) * yaws.size() + iw) * scales.size() + is;
  }
  size_t size() const { return xs.size() * ys.size() * zs.size() * yaws.size() * scales.size(); }
};

GridScores evaluate_grid(const FeatureCloud& cloud, const MapSnapshot& map,
                         const SampleSpace& space, const AssociationParams& assoc) {
  GridScores g;
  g.xs = space.xs();
  g.ys = space.ys();
  g.zs = space.zs();
  g.yaws = space.yaws();
  g.scales = space.scales();
  g.vfn.assign(g.size(), 0);
  g.dist.assign(g.size(), 0.0);

  SampleCandidate c;
  c.roll = space.roll;
  c.pitch = space.pitch;
  for (size_t ix = 0; ix < g.xs.size(); ++ix) {
    for (size_t iy = 0; iy < g.ys.size(); ++iy) {
      for (size_t iz = 0; iz < g.zs.size(); ++iz) {
        c.position = Vec3(g.xs[ix], g.ys[iy], g.zs[iz]);
        for (size_t iw = 0; iw < g.yaws.size(); ++iw) {
          c.yaw = wrap_angle(g.yaws[iw]);
          for (size_t is = 0; is < g.scales.size(); ++is) {
            c.scale = g.scales[is];
            const AssociationScore score = evaluate_candidate(map, cloud, c, assoc);
            const size_t k = g.idx(ix, iy, iz, iw, is);
            g.vfn[k] = score.vfn;
            g.dist[k] = score.mean_valid_distance;
          }
        }
      }
    }
  }

  // vfn variance over the 3x3x3 position neighborhood at fixed yaw/scale;
  // boundary cells use the neighbors that exist.
  g.var.assign(g.size(), 0.0);
  for (size_t ix = 0; ix < g.xs.size(); ++ix) {
    for (size_t iy = 0; iy < g.ys.size(); ++iy) {
      for (size_t iz = 0; iz < g.zs.size(); ++iz) {
        for (size_t iw = 0; iw < g.yaws.size(); ++iw) {
          for (size_t is = 0; is < g.scales.size(); ++is) {
            double sum = 0.0, sum_sq = 0.0;
            int n = 0;
            for (int dx = -1; dx <= 1; ++dx) {
              for (int dy = -1; dy <= 1; ++dy) {
                for (int dz = -1; dz <= 1; ++dz) {
                  const long jx = static_cast<long>(ix) + dx;
                  const long jy = static_cast<long>(iy) + dy;
                  const long jz = static_cast<long>(iz) + dz;
                  if (jx < 0 || jy < 0 || jz < 0 || jx >= static_cast<long>(g.xs.size()) ||
                      jy >= static_cast<long>(g.ys.size()) ||
                      jz >= static_cast<long>(g.zs.size()))
                    continue;
                  const double v = g.vfn[g.idx(jx, jy, jz, iw, is)];
                  sum += v;
                  sum_sq += v * v;
                  ++n;
                }
              }
            }
            const double mean = sum / n;
            g.var[g.idx(ix, iy, iz, iw, is)] = sum_sq / n - mean * mean;
          }
        }
      }
    }
  }
  return g;
}

struct BestCell {
  bool set{false};
  SampleCandidate candidate;
  int vfn{0};
  double dist{0.0};
  double var{0.0};

  // vfn descending, then mean valid distance ascending; first-seen wins ties.
  void update(const SampleCandidate& c, int v, double d, double variance) {
    if (!set || v > vfn || (v == vfn && d < dist)) {
      set = true;
      candidate = c;
      vfn = v;
      dist = d;
      var = variance;
    }
  }
};

}  // namespace

InitResult multi_level_sample(const FeatureCloud& raw_cloud, const MapSnapshot& map,
                              const SampleSpace& space, const InitThresholds& thresholds,
                              const AssociationParams& assoc, const FineLevelParams& fine) {
  if (map.empty()) throw EmptyMap();
  space.validate();
  const FeatureCloud cloud = remove_outliers(raw_cloud);
  if (cloud.size() < 20) {
    throw TooFewFeatures(std::to_string(cloud.size()) + " after outlier removal");
  }

  InitResult result;
  result.tfn = cloud.size();
  const double m_coarse = thresholds.m_coarse_ratio * cloud.size();
  const double m_fine = thresholds.m_fine_ratio * cloud.size();

  const GridScores coarse = evaluate_grid(cloud, map, space, assoc);
  result.evaluated_candidates += coarse.size();

  struct CellRef {
    size_t ix, iy, iz, iw, is;
    int vfn;
    double dist;
  };
  std::vector<CellRef> passing;
  for (size_t ix = 0; ix < coarse.xs.size(); ++ix)
    for (size_t iy = 0; iy < coarse.ys.size(); ++iy)
      for (size_t iz = 0; iz < coarse.zs.size(); ++iz)
        for (size_t iw = 0; iw < coarse.yaws.size(); ++iw)
          for (size_t is = 0; is < coarse.scales.size(); ++is) {
            const size_t k = coarse.idx(ix, iy, iz, iw, is);
            if (coarse.vfn[k] > m_coarse && coarse.var[k] < thresholds.eps_coarse) {
              passing.push_back({ix, iy, iz, iw, is, coarse.vfn[k], coarse.dist[k]});
            }
          }
  std::stable_sort(passing.begin(), passing.end(), [](const CellRef& a, const CellRef& b) {
    return a.vfn != b.vfn ? a.vfn > b.vfn : a.dist < b.dist;
  });
  if (static_cast<int>(passing.size()) > thresholds.max_spawned_cells) {
    passing.resize(thresholds.max_spawned_cells);
  }

  BestCell best;
  for (const auto& cell : passing) {
    SampleSpace sub;
    sub.center = Vec3(coarse.xs[cell.ix], coarse.ys[cell.iy], coarse.zs[cell.iz]);
    sub.yaw_center = coarse.yaws[cell.iw];
    sub.roll = space.roll;
    sub.pitch = space.pitch;
    // Axes degenerate at the coarse level stay degenerate.
    const bool pos_live = space.half_extent.maxCoeff() > 0.0;
    sub.half_extent = pos_live ? Vec3::Constant(fine.position_half) : Vec3::Zero();
    sub.position_resolution = Vec3::Constant(fine.position_resolution);
    sub.yaw_half_range = space.yaw_half_range > 0.0 ? fine.yaw_half : 0.0;
    sub.yaw_resolution = fine.yaw_resolution;
    const double s0 = coarse.scales[cell.is];
    if (space.scale_max > space.scale_min) {
      sub.scale_min = s0 - fine.scale_half;
      sub.scale_max = s0 + fine.scale_half;
      sub.scale_resolution = fine.scale_resolution;
    } else {
      sub.scale_min = sub.scale_max = s0;
    }

    const GridScores fg = evaluate_grid(cloud, map, sub, assoc);
    result.evaluated_candidates += fg.size();

    SampleCandidate c;
    c.roll = space.roll;
    c.pitch = space.pitch;
    for (size_t ix = 0; ix < fg.xs.size(); ++ix)
      for (size_t iy = 0; iy < fg.ys.size(); ++iy)
        for (size_t iz = 0; iz < fg.zs.size(); ++iz)
          for (size_t iw = 0; iw < fg.yaws.size(); ++iw)
            for (size_t is = 0; is < fg.scales.size(); ++is) {
              const size_t k = fg.idx(ix, iy, iz, iw, is);
              c.position = Vec3(fg.xs[ix], fg.ys[iy], fg.zs[iz]);
              c.yaw = wrap_angle(fg.yaws[iw]);
              c.scale = fg.scales[is];
              best.update(c, fg.vfn[k], fg.dist[k], fg.var[k]);
            }
  }

  if (best.set) {
    result.best = best.candidate;
    result.vfn = best.vfn;
    result.variance = best.var;
    result.mean_valid_distance = best.dist;
    if (best.vfn > m_fine && best.var < thresholds.eps_fine) {
      result.status = InitResult::Status::Success;
    }
  }
  return result;
}

}  // namespace palo
