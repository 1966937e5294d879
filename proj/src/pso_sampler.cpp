#include "palo/pso_sampler.hpp"

#include <cmath>

namespace palo {

Pose relative_camera_motion(const Pose& vio_prev, const Pose& vio_cur, const Pose& t_ci) {
  if (vio_prev.to != FrameId::camera_world() || vio_cur.to != FrameId::camera_world()) {
    throw FrameMismatch("VIO poses must map into C0");
  }
  // R_{C_{k-1}C_k} = R_CI R_{C0 I_{k-1}}^-1 R_{C0 I_k} R_IC
  // t_{C_{k-1}C_k} = R_CI R_{C0 I_{k-1}}^-1 (t_{C0 I_k} - t_{C0 I_{k-1}})
  const Quat r_ci = t_ci.rotation;
  const Quat r_rel =
      (r_ci * vio_prev.rotation.conjugate() * vio_cur.rotation * r_ci.conjugate()).normalized();
  const Vec3 t_rel =
      r_ci * (vio_prev.rotation.conjugate() * (vio_cur.translation - vio_prev.translation));
  return Pose(r_rel, t_rel, FrameId::camera(vio_cur.from.index),
              FrameId::camera(vio_prev.from.index));
}

Pose propagate_pose(const Pose& t_l_ck_prev, const Pose& vio_prev, const Pose& vio_cur,
                    const Pose& t_ci) {
  if (t_l_ck_prev.to != FrameId::lidar_world()) {
    throw FrameMismatch("previous relative pose must map into LidarWorld");
  }
  return t_l_ck_prev.compose(relative_camera_motion(vio_prev, vio_cur, t_ci));
}

TriggerState check_trigger(const AssociationScore& score, TriggerState trigger) {
  if (score.tfn == 0) throw ZeroFeatures();
  trigger.last_ratio = static_cast<double>(score.vfn) / score.tfn;
  trigger.triggered = trigger.last_ratio < trigger.tau_trigger;
  return trigger;
}

SampleSpace adaptive_space(const Pose& t_pred, const AssociationScore& score,
                           double current_scale, const AdaptiveSpaceParams& params) {
  const double ratio =
      score.tfn > 0 ? static_cast<double>(score.vfn) / score.tfn : 0.0;
  const double grow = 1.0 + params.kappa * (1.0 - ratio);

  SampleSpace space;
  space.center = t_pred.translation;
  space.half_extent = Vec3::Constant(params.base_extent * grow);
  space.position_resolution = Vec3::Constant(params.position_resolution);
  double yaw, pitch, roll;
  euler_zyx(t_pred.rotation, &yaw, &pitch, &roll);
  space.yaw_center = yaw;
  space.yaw_half_range = params.yaw_min + (params.yaw_max - params.yaw_min) * (1.0 - ratio);
  space.yaw_resolution = params.yaw_resolution;
  space.roll = roll;
  space.pitch = pitch;
  space.scale_min = current_scale - params.scale_half;
  space.scale_max = current_scale + params.scale_half;
  space.scale_resolution = params.scale_resolution;
  return space;
}

double fitness(const AssociationScore& score, const AssociationParams& assoc) {
  if (score.tfn == 0 || score.vfn == 0) return 2.0;
  const double ratio = static_cast<double>(score.vfn) / score.tfn;
  return (1.0 - ratio) + score.mean_valid_distance / assoc.valid_match_threshold;
}

double fitness(const SampleCandidate& candidate, const FeatureCloud& cloud,
               const MapSnapshot& map, const AssociationParams& assoc) {
  return fitness(evaluate_candidate(map, cloud, candidate, assoc), assoc);
}

namespace {

using Vec5 = Eigen::Matrix<double, 5, 1>;

Vec5 candidate_delta(const SampleCandidate& a, const SampleCandidate& b) {
  Vec5 d;
  d.segment<3>(0) = a.position - b.position;
  d(3) = wrap_angle(a.yaw - b.yaw);
  d(4) = a.scale - b.scale;
  return d;
}

SampleCandidate candidate_step(const SampleCandidate& c, const Vec5& v) {
  SampleCandidate out = c;
  out.position += v.segment<3>(0);
  out.yaw = wrap_angle(out.yaw + v(3));
  out.scale += v(4);
  return out;
}

}  // namespace

SampleResult pso_sample(const FeatureCloud& cloud, const MapSnapshot& map,
                        const SampleCandidate& predicted, const SampleSpace& space,
                        const PsoParams& params, const AssociationParams& assoc) {
  if (map.empty()) throw EmptyMap();
  params.validate();
  space.validate();
  std::mt19937_64 rng(params.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  Vec5 vmax;
  vmax.segment<3>(0) = space.half_extent;
  vmax(3) = space.yaw_half_range;
  vmax(4) = 0.5 * (space.scale_max - space.scale_min);

  SampleResult result;
  std::vector<Particle> swarm(params.m);
  // The propagated pose rides along as particle 0, so the swarm can never do
  // worse than VIO propagation under the fitness.
  swarm[0].position = space.clamp(predicted);
  for (int i = 1; i < params.m; ++i) {
    SampleCandidate c;
    c.position = space.center + Vec3((2.0 * u01(rng) - 1.0) * space.half_extent.x(),
                                     (2.0 * u01(rng) - 1.0) * space.half_extent.y(),
                                     (2.0 * u01(rng) - 1.0) * space.half_extent.z());
    c.yaw = wrap_angle(space.yaw_center + (2.0 * u01(rng) - 1.0) * space.yaw_half_range);
    c.scale = space.scale_min + u01(rng) * (space.scale_max - space.scale_min);
    c.roll = space.roll;
    c.pitch = space.pitch;
    swarm[i].position = c;
  }

  SampleCandidate gbest;
  double gbest_fitness = std::numeric_limits<double>::infinity();
  for (auto& p : swarm) {
    const double f = fitness(p.position, cloud, map, assoc);
    ++result.evaluations;
    p.pbest = p.position;
    p.pbest_fitness = f;
    if (f < gbest_fitness) {
      gbest_fitness = f;
      gbest = p.position;
    }
  }

  int stale = 0;
  for (int iter = 0; iter < params.g_max && stale < params.stagnation_limit; ++iter) {
    // Velocity/position update owns the random stream.
    for (auto& p : swarm) {
      const double r1 = u01(rng);
      const double r2 = u01(rng);
      p.velocity = params.w * p.velocity +
                   params.c1 * r1 * candidate_delta(p.pbest, p.position) +
                   params.c2 * r2 * candidate_delta(gbest, p.position);
      p.velocity = p.velocity.cwiseMax(-vmax).cwiseMin(vmax);
      p.position = space.clamp(candidate_step(p.position, p.velocity));
    }

    bool improved = false;
    for (auto& p : swarm) {
      const double f = fitness(p.position, cloud, map, assoc);
      ++result.evaluations;
      if (f < p.pbest_fitness) {
        p.pbest_fitness = f;
        p.pbest = p.position;
      }
      if (f < gbest_fitness) {
        gbest_fitness = f;
        gbest = p.position;
        improved = true;
      }
    }
    stale = improved ? 0 : stale + 1;
    result.iterations = iter + 1;
    result.gbest_trace.push_back(gbest_fitness);
  }

  result.best = gbest;
  result.best_fitness = gbest_fitness;
  return result;
}

SampleResult greedy_random_sample(const FeatureCloud& cloud, const MapSnapshot& map,
                                  const SampleCandidate& predicted, const SampleSpace& space,
                                  std::size_t budget, uint64_t seed,
                                  const AssociationParams& assoc) {
  if (map.empty()) throw EmptyMap();
  space.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  SampleResult result;
  result.best = space.clamp(predicted);
  result.best_fitness = fitness(result.best, cloud, map, assoc);
  ++result.evaluations;

  while (result.evaluations < budget) {
    SampleCandidate c;
    c.position = space.center + Vec3((2.0 * u01(rng) - 1.0) * space.half_extent.x(),
                                     (2.0 * u01(rng) - 1.0) * space.half_extent.y(),
                                     (2.0 * u01(rng) - 1.0) * space.half_extent.z());
    c.yaw = wrap_angle(space.yaw_center + (2.0 * u01(rng) - 1.0) * space.yaw_half_range);
    c.scale = space.scale_min + u01(rng) * (space.scale_max - space.scale_min);
    c.roll = space.roll;
    c.pitch = space.pitch;
    const double f = fitness(c, cloud, map, assoc);
    ++result.evaluations;
    if (f < result.best_fitness) {
      result.best_fitness = f;
      result.best = c;
    }
  }
  return result;
}

SampleResult uniform_grid_sample(const FeatureCloud& cloud, const MapSnapshot& map,
                                 const SampleCandidate& predicted, const SampleSpace& space,
                                 const AssociationParams& assoc) {
  if (map.empty()) throw EmptyMap();
  space.validate();

  SampleResult result;
  result.best = space.clamp(predicted);
  result.best_fitness = fitness(result.best, cloud, map, assoc);
  ++result.evaluations;

  SampleCandidate c;
  c.roll = space.roll;
  c.pitch = space.pitch;
  for (double x : space.xs())
    for (double y : space.ys())
      for (double z : space.zs())
        for (double yaw : space.yaws())
          for (double s : space.scales()) {
            c.position = Vec3(x, y, z);
            c.yaw = wrap_angle(yaw);
            c.scale = s;
            const double f = fitness(c, cloud, map, assoc);
            ++result.evaluations;
            if (f < result.best_fitness) {
              result.best_fitness = f;
              result.best = c;
            }
          }
  return result;
}

}  // namespace palo
