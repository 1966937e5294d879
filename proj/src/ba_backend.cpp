#include "palo/ba_backend.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>

namespace palo {

// ---------------------------------------------------------------------------
// standalone residuals

std::optional<Eigen::Vector2d> reprojection_residual(
    const ImuState& state_i, const ImuState& state_j, double inv_depth,
    const Eigen::Vector2d& u_i, const Eigen::Vector2d& u_j, const Pose& t_ci,
    const PinholeIntrinsics& intrinsics, Eigen::Matrix<double, 2, 6>* jac_pose_i,
    Eigen::Matrix<double, 2, 6>* jac_pose_j, Eigen::Vector2d* jac_inv_depth) {
  const Mat3 r_ci = t_ci.rotation.toRotationMatrix();
  const Vec3 t_ci_t = t_ci.translation;
  const Mat3 r_ic = r_ci.transpose();
  const Vec3 t_ic = -(r_ic * t_ci_t);

  const Vec3 dir = intrinsics.unproject(u_i.x(), u_i.y());
  const Vec3 p_cam_i = dir / inv_depth;
  const Vec3 p_imu_i = r_ic * p_cam_i + t_ic;
  const Mat3 r_i = state_i.q.toRotationMatrix();
  const Vec3 p_c0 = r_i * p_imu_i + state_i.p;
  const Mat3 r_j_t = state_j.q.toRotationMatrix().transpose();
  const Vec3 p_imu_j = r_j_t * (p_c0 - state_j.p);
  const Vec3 p_cam_j = r_ci * p_imu_j + t_ci_t;

  if (p_cam_j.z() < 1e-3) return std::nullopt;

  // Unit-sphere normalization before projecting; for the pinhole model the
  // projection is scale-invariant so the value (and Jacobian) is unchanged.
  const Vec3 p_unit = p_cam_j / p_cam_j.norm();
  const Eigen::Vector2d predicted = intrinsics.project(p_unit);
  const Eigen::Vector2d residual = predicted - u_j;

  if (jac_pose_i || jac_pose_j || jac_inv_depth) {
    const Eigen::Matrix<double, 2, 3> dpi = intrinsics.project_jacobian(p_cam_j);
    if (jac_pose_i) {
      jac_pose_i->block<2, 3>(0, 0) = dpi * (r_ci * r_j_t);
      jac_pose_i->block<2, 3>(0, 3) = dpi * (-(r_ci * r_j_t * r_i) * skew(p_imu_i));
    }
    if (jac_pose_j) {
      jac_pose_j->block<2, 3>(0, 0) = dpi * (-(r_ci * r_j_t));
      jac_pose_j->block<2, 3>(0, 3) = dpi * (r_ci * skew(p_imu_j));
    }
    if (jac_inv_depth) {
      *jac_inv_depth =
          dpi * (r_ci * r_j_t * r_i * r_ic * (-(1.0 / (inv_depth * inv_depth)) * dir));
    }
  }
  return residual;
}

double point_plane_residual(const RelativePose& rel, double inv_depth, const Vec3& dir_anchor,
                            const Quat& q_transfer, const Vec3& t_transfer, const PlaneHN& plane,
                            CouplingMode mode, Eigen::Matrix<double, 1, 6>* jac_rel,
                            double* jac_inv_depth) {
  const Vec3 f_cur = q_transfer * (dir_anchor / inv_depth) + t_transfer;
  const Mat3 r_lc = rel.rotation.toRotationMatrix();
  const double residual = plane.normal.dot(r_lc * f_cur + rel.translation) + plane.d;

  if (jac_rel) {
    jac_rel->block<1, 3>(0, 0) = plane.normal.transpose();
    jac_rel->block<1, 3>(0, 3) = -plane.normal.transpose() * r_lc * skew(f_cur);
  }
  if (jac_inv_depth) {
    if (mode == CouplingMode::LooselyCoupled) {
      *jac_inv_depth = 0.0;
    } else {
      *jac_inv_depth = plane.normal.dot(
          r_lc * (q_transfer * (-(1.0 / (inv_depth * inv_depth)) * dir_anchor)));
    }
  }
  return residual;
}

// ---------------------------------------------------------------------------
// solver

namespace {

constexpr double kDiagFloor = 1e-6;

struct Layout {
  int fixed{1};
  int n_kf{0};
  bool rel_active{false};
  bool rel_rot_active{false};
  int pose_dim{0};
  int rel_offset{-1};

  int kf_offset(int i) const { return 15 * (i - fixed); }
  bool kf_free(int i) const { return i >= fixed; }
};

struct Assembly {
  Eigen::MatrixXd h;
  Eigen::VectorXd b;
  std::vector<double> h_ff;
  std::vector<Eigen::VectorXd> h_pf;
  std::vector<double> b_f;
  double cost{0.0};
  double cost_imu{0.0}, cost_reproj{0.0}, cost_pp{0.0}, cost_loop{0.0};
};

// Huber weight on the whitened residual norm; accumulates the robust cost.
double huber_weight(double norm_sq, double k, double* cost) {
  const double e = std::sqrt(norm_sq);
  if (e <= k) {
    *cost += norm_sq;
    return 1.0;
  }
  *cost += k * (2.0 * e - k);
  return k / e;
}

Mat3 so3_right_jacobian_inv(const Vec3& theta) {
  const double angle = theta.norm();
  const Mat3 tx = skew(theta);
  if (angle < 1e-7) return Mat3::Identity() + 0.5 * tx + (1.0 / 12.0) * tx * tx;
  const double half = 0.5 * angle;
  const double cot = 1.0 / std::tan(half);
  return Mat3::Identity() + 0.5 * tx +
         ((1.0 - half * cot) / (angle * angle)) * tx * tx;
}

struct StateSnapshot {
  std::vector<ImuState> states;
  RelativePose rel;
  std::vector<double> lambdas;
};

StateSnapshot take_snapshot(const FactorGraphProblem& p) {
  StateSnapshot s;
  for (const auto& kf : *p.keyframes) s.states.push_back(kf.state);
  s.rel = *p.rel;
  for (const auto& t : *p.tracks) s.lambdas.push_back(t.inv_depth);
  return s;
}

void restore_snapshot(FactorGraphProblem& p, const StateSnapshot& s) {
  for (size_t i = 0; i < p.keyframes->size(); ++i) (*p.keyframes)[i].state = s.states[i];
  *p.rel = s.rel;
  for (size_t i = 0; i < p.tracks->size(); ++i) (*p.tracks)[i].inv_depth = s.lambdas[i];
}

class Assembler {
 public:
  Assembler(FactorGraphProblem& p, const Layout& layout)
      : p_(p), layout_(layout), n_tracks_(static_cast<int>(p.tracks->size())) {}

  // Assembles residuals (and optionally the normal equations) at the
  // problem's current states.
  Assembly run(bool with_derivatives) {
    Assembly a;
    if (with_derivatives) {
      a.h = Eigen::MatrixXd::Zero(layout_.pose_dim, layout_.pose_dim);
      a.b = Eigen::VectorXd::Zero(layout_.pose_dim);
      a.h_ff.assign(n_tracks_, 0.0);
      a.h_pf.assign(n_tracks_, Eigen::VectorXd::Zero(layout_.pose_dim));
      a.b_f.assign(n_tracks_, 0.0);
    }
    add_imu(a, with_derivatives);
    add_reproj(a, with_derivatives);
    add_point_plane(a, with_derivatives);
    add_loops(a, with_derivatives);
    a.cost = a.cost_imu + a.cost_reproj + a.cost_pp + a.cost_loop;
    return a;
  }

 private:
  // Scatter a whitened factor into H/b. blocks: (column offset, jacobian).
  void scatter(Assembly& a, const std::vector<std::pair<int, Eigen::MatrixXd>>& blocks,
               int feat_slot, const Eigen::VectorXd& j_feat, const Eigen::VectorXd& r,
               double weight) {
    const double s = std::sqrt(weight);
    for (const auto& [ci, ji] : blocks) {
      const Eigen::MatrixXd jw_i = s * ji;
      a.b.segment(ci, ji.cols()) += jw_i.transpose() * (s * r);
      for (const auto& [cj, jj] : blocks) {
        a.h.block(ci, cj, ji.cols(), jj.cols()) += jw_i.transpose() * (s * jj);
      }
      if (feat_slot >= 0) {
        a.h_pf[feat_slot].segment(ci, ji.cols()) += jw_i.transpose() * (s * j_feat);
      }
    }
    if (feat_slot >= 0) {
      const Eigen::VectorXd jf = s * j_feat;
      a.h_ff[feat_slot] += jf.squaredNorm();
      a.b_f[feat_slot] += jf.dot(s * r);
    }
  }

  void add_imu(Assembly& a, bool deriv) {
    const auto& kfs = *p_.keyframes;
    const auto& pres = *p_.preintegrations;
    for (size_t k = 0; k + 1 < kfs.size(); ++k) {
      const auto& pre = pres[k];
      if (pre.dt_total <= 0.0) continue;
      Eigen::Matrix<double, 15, 15> jk, jk1;
      const bool need_k = deriv && layout_.kf_free(static_cast<int>(k));
      const bool need_k1 = deriv && layout_.kf_free(static_cast<int>(k) + 1);
      const auto r = imu_residual(kfs[k].state, kfs[k + 1].state, pre, p_.params.gravity,
                                  need_k ? &jk : nullptr, need_k1 ? &jk1 : nullptr);

      Eigen::Matrix<double, 15, 15> cov =
          0.5 * (pre.covariance + pre.covariance.transpose());
      cov.diagonal().array() += 1e-12;
      const Eigen::LLT<Eigen::Matrix<double, 15, 15>> llt(cov);
      const Eigen::Matrix<double, 15, 1> rw = llt.matrixL().solve(r);
      a.cost_imu += rw.squaredNorm();
      if (!deriv) continue;

      std::vector<std::pair<int, Eigen::MatrixXd>> blocks;
      if (need_k) {
        blocks.emplace_back(layout_.kf_offset(static_cast<int>(k)),
                            Eigen::MatrixXd(llt.matrixL().solve(jk)));
      }
      if (need_k1) {
        blocks.emplace_back(layout_.kf_offset(static_cast<int>(k) + 1),
                            Eigen::MatrixXd(llt.matrixL().solve(jk1)));
      }
      scatter(a, blocks, -1, {}, rw, 1.0);
    }
  }

  void add_reproj(Assembly& a, bool deriv) {
    const auto& kfs = *p_.keyframes;
    auto& tracks = *p_.tracks;
    const double inv_sigma = 1.0 / p_.params.pixel_sigma;
    const double k_huber = p_.params.huber_reproj_px * inv_sigma;
    for (int ti = 0; ti < n_tracks_; ++ti) {
      auto& track = tracks[ti];
      if (track.outlier || track.inv_depth < p_.params.lambda_min) continue;
      const TrackObservation* anchor_obs = track.obs_at(track.anchor);
      if (!anchor_obs) continue;
      const Eigen::Vector2d u_i(anchor_obs->u, anchor_obs->v);
      for (const auto& obs : track.observations) {
        if (obs.frame == track.anchor) continue;
        Eigen::Matrix<double, 2, 6> ji, jj;
        Eigen::Vector2d jf;
        const bool need_i = deriv && layout_.kf_free(track.anchor);
        const bool need_j = deriv && layout_.kf_free(obs.frame);
        const auto r = reprojection_residual(
            kfs[track.anchor].state, kfs[obs.frame].state, track.inv_depth, u_i,
            Eigen::Vector2d(obs.u, obs.v), p_.t_ci, p_.intrinsics, need_i ? &ji : nullptr,
            need_j ? &jj : nullptr, deriv ? &jf : nullptr);
        if (!r) continue;  // behind camera: dropped for this iteration
        const Eigen::Vector2d rw = *r * inv_sigma;
        double w = huber_weight(rw.squaredNorm(), k_huber, &a.cost_reproj);
        if (!deriv) continue;
        std::vector<std::pair<int, Eigen::MatrixXd>> blocks;
        if (need_i) blocks.emplace_back(layout_.kf_offset(track.anchor), inv_sigma * ji);
        if (need_j) blocks.emplace_back(layout_.kf_offset(obs.frame), inv_sigma * jj);
        scatter(a, blocks, ti, inv_sigma * jf, rw, w);
      }
    }
  }

  void add_point_plane(Assembly& a, bool deriv) {
    if (p_.point_plane.empty()) return;
    auto& tracks = *p_.tracks;
    const double info = p_.params.point_plane_weight_c / p_.params.assoc.plane_fit_threshold;
    const double sqrt_info = std::sqrt(info);
    const double k_huber = p_.params.assoc.valid_match_threshold * sqrt_info;
    for (const auto& f : p_.point_plane) {
      auto& track = tracks[f.track];
      if (track.outlier || track.inv_depth < p_.params.lambda_min) continue;
      Eigen::Matrix<double, 1, 6> j_rel;
      double j_lambda = 0.0;
      const double r = point_plane_residual(*p_.rel, track.inv_depth, f.dir_anchor,
                                            f.q_transfer, f.t_transfer, f.plane, p_.params.mode,
                                            deriv ? &j_rel : nullptr,
                                            deriv ? &j_lambda : nullptr);
      Eigen::VectorXd rw(1);
      rw(0) = r * sqrt_info;
      double w = huber_weight(rw.squaredNorm(), k_huber, &a.cost_pp);
      if (!deriv || !layout_.rel_active) continue;
      Eigen::MatrixXd j_rel_active;
      if (layout_.rel_rot_active) {
        j_rel_active = sqrt_info * j_rel;
      } else {
        j_rel_active = sqrt_info * j_rel.block<1, 3>(0, 0);
      }
      std::vector<std::pair<int, Eigen::MatrixXd>> blocks{{layout_.rel_offset, j_rel_active}};
      Eigen::VectorXd jf(1);
      jf(0) = sqrt_info * j_lambda;
      scatter(a, blocks, f.track, jf, rw, w);
    }
  }

  void add_loops(Assembly& a, bool deriv) {
    const auto& kfs = *p_.keyframes;
    for (const auto& loop : p_.loops) {
      const ImuState& sa = loop.a_in_window ? kfs[loop.kf_a].state : loop.fixed_a;
      const ImuState& sb = kfs[loop.kf_b].state;
      const Mat3 ra_t = sa.q.toRotationMatrix().transpose();
      const Vec3 t_hat = ra_t * (sb.p - sa.p);
      const Quat r_hat = sa.q.conjugate() * sb.q;
      const Quat r_err_q = loop.q_meas.conjugate() * r_hat;
      const Vec3 r_theta = quat_log(r_err_q);
      const Vec3 r_t = loop.q_meas.conjugate() * (t_hat - loop.t_meas);

      Eigen::VectorXd r(6);
      r.segment<3>(0) = r_t;
      r.segment<3>(3) = r_theta;
      const double inv_sigma = 1.0 / loop.sigma;
      a.cost_loop += (r * inv_sigma).squaredNorm();
      if (!deriv) continue;

      const Mat3 rm_t = loop.q_meas.toRotationMatrix().transpose();
      const Mat3 jr_inv = so3_right_jacobian_inv(r_theta);
      const Mat3 rhat_m = r_hat.toRotationMatrix();

      std::vector<std::pair<int, Eigen::MatrixXd>> blocks;
      if (loop.a_in_window && layout_.kf_free(loop.kf_a)) {
        Eigen::MatrixXd ja = Eigen::MatrixXd::Zero(6, 15);
        ja.block<3, 3>(0, 0) = -rm_t * ra_t;
        ja.block<3, 3>(0, 3) = rm_t * skew(t_hat);
        ja.block<3, 3>(3, 3) = -jr_inv * rhat_m.transpose();
        blocks.emplace_back(layout_.kf_offset(loop.kf_a), inv_sigma * ja);
      }
      if (layout_.kf_free(loop.kf_b)) {
        Eigen::MatrixXd jb = Eigen::MatrixXd::Zero(6, 15);
        jb.block<3, 3>(0, 0) = rm_t * ra_t;
        jb.block<3, 3>(3, 3) = jr_inv;
        blocks.emplace_back(layout_.kf_offset(loop.kf_b), inv_sigma * jb);
      }
      scatter(a, blocks, -1, {}, inv_sigma * r, 1.0);
    }
  }

  FactorGraphProblem& p_;
  const Layout& layout_;
  int n_tracks_;
};

void apply_delta(FactorGraphProblem& p, const Layout& layout, const Eigen::VectorXd& dx,
                 const std::vector<double>& df) {
  auto& kfs = *p.keyframes;
  for (int i = layout.fixed; i < layout.n_kf; ++i) {
    const int off = layout.kf_offset(i);
    ImuState& s = kfs[i].state;
    s.p += dx.segment<3>(off);
    s.q = (s.q * quat_exp(dx.segment<3>(off + 3))).normalized();
    s.v += dx.segment<3>(off + 6);
    s.bias.accel += dx.segment<3>(off + 9);
    s.bias.gyro += dx.segment<3>(off + 12);
  }
  if (layout.rel_active) {
    p.rel->translation += dx.segment<3>(layout.rel_offset);
    if (layout.rel_rot_active) {
      p.rel->rotation =
          (p.rel->rotation * quat_exp(dx.segment<3>(layout.rel_offset + 3))).normalized();
    }
  }
  auto& tracks = *p.tracks;
  for (size_t t = 0; t < tracks.size(); ++t) tracks[t].inv_depth += df[t];
}

}  // namespace

SolveReport solve_window(FactorGraphProblem& problem) {
  SolveReport report;
  Layout layout;
  layout.fixed = problem.fixed_keyframes;
  layout.n_kf = static_cast<int>(problem.keyframes->size());
  layout.rel_active = problem.optimize_rel && !problem.point_plane.empty();
  if (layout.rel_active) {
    // Rotation of the relative pose is observable only when the associated
    // plane normals span three directions.
    Mat3 nn = Mat3::Zero();
    for (const auto& f : problem.point_plane) {
      nn += f.plane.normal * f.plane.normal.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(nn);
    layout.rel_rot_active = problem.point_plane.size() >= 3 &&
                            es.eigenvalues()(0) > 1e-6 * std::max(es.eigenvalues()(2), 1e-12);
    report.rel_rotation_held = !layout.rel_rot_active;
  }
  const int free_kfs = std::max(0, layout.n_kf - layout.fixed);
  layout.pose_dim = 15 * free_kfs + (layout.rel_active ? (layout.rel_rot_active ? 6 : 3) : 0);
  layout.rel_offset = 15 * free_kfs;

  Assembler assembler(problem, layout);

  if (layout.pose_dim == 0 && problem.tracks->empty()) {
    report.solved = true;
    return report;
  }

  const StateSnapshot original = take_snapshot(problem);
  Assembly current = assembler.run(true);
  report.initial_cost = current.cost;
  report.initial_imu = current.cost_imu;
  report.initial_reproj = current.cost_reproj;
  report.initial_point_plane = current.cost_pp;
  report.initial_loop = current.cost_loop;

  double mu = 1e-8;
  int escalations = 0;
  const int n_tracks = static_cast<int>(problem.tracks->size());

  for (int iter = 0; iter < problem.params.max_iterations; ++iter) {
    report.iterations = iter + 1;

    // Schur complement of the inverse-depth block on the damped system.
    Eigen::MatrixXd h_red = current.h;
    Eigen::VectorXd b_red = current.b;
    std::vector<double> h_ff_damped(n_tracks, 0.0);
    for (int t = 0; t < n_tracks; ++t) {
      h_ff_damped[t] = current.h_ff[t] * (1.0 + mu) + (current.h_ff[t] > 0 ? mu * kDiagFloor : 0);
      if (current.h_ff[t] <= 1e-12) continue;
      const double inv = 1.0 / h_ff_damped[t];
      h_red.noalias() -= current.h_pf[t] * (inv * current.h_pf[t].transpose());
      b_red.noalias() -= current.h_pf[t] * (inv * current.b_f[t]);
    }
    Eigen::VectorXd diag = h_red.diagonal().cwiseMax(kDiagFloor);
    h_red.diagonal() += mu * diag;

    Eigen::VectorXd dx = Eigen::VectorXd::Zero(layout.pose_dim);
    if (layout.pose_dim > 0) {
      dx = h_red.ldlt().solve(-b_red);
    }
    std::vector<double> df(n_tracks, 0.0);
    for (int t = 0; t < n_tracks; ++t) {
      if (current.h_ff[t] <= 1e-12) continue;
      df[t] = -(current.b_f[t] + current.h_pf[t].dot(dx)) / h_ff_damped[t];
    }

    double step = dx.size() > 0 ? dx.lpNorm<Eigen::Infinity>() : 0.0;
    for (double v : df) step = std::max(step, std::abs(v));
    if (step < 1e-13) break;  // at a stationary point

    const StateSnapshot before = take_snapshot(problem);
    apply_delta(problem, layout, dx, df);
    Assembly trial = assembler.run(true);

    if (trial.cost <= current.cost) {
      const double decrease = current.cost - trial.cost;
      current = std::move(trial);
      escalations = 0;
      mu = std::max(mu / 3.0, 1e-10);
      if (decrease <= problem.params.cost_decrease_tol * std::max(current.cost, 1e-16)) break;
    } else {
      restore_snapshot(problem, before);
      mu *= 10.0;
      ++escalations;
      if (escalations >= problem.params.max_damping_escalations) {
        restore_snapshot(problem, original);
        throw SolverDiverged();
      }
    }
  }

  report.final_cost = current.cost;
  report.final_imu = current.cost_imu;
  report.final_reproj = current.cost_reproj;
  report.final_point_plane = current.cost_pp;
  report.final_loop = current.cost_loop;
  report.solved = true;
  return report;
}

// ---------------------------------------------------------------------------
// sliding window

void SlidingWindow::add_keyframe(const KeyframeState& kf, std::optional<PreintegratedImu> preint) {
  if (!keyframes_.empty() && !preint.has_value()) {
    throw InvalidSpec("non-first keyframe needs a preintegration");
  }
  if (preint) preints_.push_back(*preint);
  keyframes_.push_back(kf);
  record_history();
}

void SlidingWindow::add_observation(int track_id, double u, double v, double depth_init) {
  const int window_index = size() - 1;
  for (auto& t : tracks_) {
    if (t.id == track_id) {
      t.observations.push_back({window_index, u, v});
      return;
    }
  }
  FeatureTrack t;
  t.id = track_id;
  t.anchor = window_index;
  t.observations.push_back({window_index, u, v});
  const double depth = (std::isfinite(depth_init) && depth_init > 0.0)
                           ? depth_init
                           : params_.ba.default_feature_depth;
  t.inv_depth = 1.0 / depth;
  tracks_.push_back(std::move(t));
}

Pose SlidingWindow::camera_pose(int window_index) const {
  const auto& kf = keyframes_[window_index];
  const Pose imu_pose(kf.state.q, kf.state.p, FrameId::imu(kf.frame_index),
                      FrameId::camera_world());
  Pose t_ci = params_.t_ci;
  t_ci.from = FrameId::imu(kf.frame_index);
  t_ci.to = FrameId::camera(kf.frame_index);
  return imu_pose.compose(t_ci.inverse());
}

void SlidingWindow::propagate_rel() {
  if (size() < 2) return;
  const auto& prev = keyframes_[size() - 2];
  const auto& cur = keyframes_[size() - 1];
  const Pose vio_prev(prev.state.q, prev.state.p, FrameId::imu(prev.frame_index),
                      FrameId::camera_world());
  const Pose vio_cur(cur.state.q, cur.state.p, FrameId::imu(cur.frame_index),
                     FrameId::camera_world());
  Pose t_ci = params_.t_ci;
  const Pose next = propagate_pose(rel_.pose(prev.frame_index), vio_prev, vio_cur, t_ci);
  rel_ = RelativePose::from_pose(next);
}

FeatureCloud SlidingWindow::current_feature_cloud() const {
  FeatureCloud cloud;
  cloud.frame = FrameId::camera(newest().frame_index);
  const int newest_idx = size() - 1;
  const Pose cam_new_inv = camera_pose(newest_idx).inverse();
  for (const auto& t : tracks_) {
    if (t.outlier || t.inv_depth < params_.ba.lambda_min) continue;
    const TrackObservation* anchor_obs = t.obs_at(t.anchor);
    if (!anchor_obs || !t.obs_at(newest_idx)) continue;
    const Vec3 dir = params_.intrinsics.unproject(anchor_obs->u, anchor_obs->v);
    const Vec3 in_anchor_cam = dir / t.inv_depth;
    const Vec3 in_c0 = camera_pose(t.anchor).act(in_anchor_cam);
    FeaturePoint fp;
    fp.id = t.id;
    fp.point = cam_new_inv.act(in_c0);
    fp.inv_depth = t.inv_depth;
    cloud.points.push_back(fp);
  }
  return cloud;
}

int SlidingWindow::build_point_plane_factors(const MapSnapshotPtr& map,
                                             std::vector<PointPlaneFactor>* out,
                                             AssociationScore* score) const {
  out->clear();
  *score = AssociationScore{};
  if (!map || map->empty()) return 0;
  const int newest_idx = size() - 1;
  const Pose cam_new = camera_pose(newest_idx);
  const Mat3 r_lc = rel_.rotation.toRotationMatrix();
  double dist_sum = 0.0;
  std::vector<KdTree::Hit> hits;
  std::vector<Vec3> neighbors;

  for (size_t ti = 0; ti < tracks_.size(); ++ti) {
    const auto& t = tracks_[ti];
    if (t.outlier) continue;
    if (!t.obs_at(newest_idx)) continue;
    ++score->tfn;
    if (t.inv_depth < params_.ba.lambda_min) continue;
    const TrackObservation* anchor_obs = t.obs_at(t.anchor);
    if (!anchor_obs) continue;

    const Vec3 dir = params_.intrinsics.unproject(anchor_obs->u, anchor_obs->v);
    const Pose transfer = cam_new.inverse().compose(camera_pose(t.anchor));
    const Vec3 f_cur = transfer.act(dir / t.inv_depth);
    const Vec3 f_l = r_lc * f_cur + rel_.translation;

    map->knn_raw(f_l, params_.ba.assoc.neighbor_count, hits);
    if (static_cast<int>(hits.size()) < 3) continue;
    neighbors.clear();
    for (const auto& h : hits) neighbors.push_back(map->points()[h.index]);
    try {
      const PlaneHN plane = fit_plane_raw(neighbors, params_.ba.assoc.plane_fit_threshold);
      if (!plane.valid) continue;
      const double sd = point_to_plane_signed(f_l, plane);
      if (std::abs(sd) > params_.ba.assoc.valid_match_threshold) continue;
      PointPlaneFactor f;
      f.track = static_cast<int>(ti);
      f.dir_anchor = dir;
      f.q_transfer = transfer.rotation;
      f.t_transfer = transfer.translation;
      f.plane = plane;
      out->push_back(f);
      ++score->vfn;
      dist_sum += std::abs(sd);
    } catch (const DegenerateGeometry&) {
    }
  }
  if (score->vfn > 0) score->mean_valid_distance = dist_sum / score->vfn;
  return static_cast<int>(out->size());
}

FactorGraphProblem SlidingWindow::make_problem(bool with_point_plane,
                                               const MapSnapshotPtr& map) {
  (void)map;
  (void)with_point_plane;
  FactorGraphProblem p;
  p.keyframes = &keyframes_;
  p.tracks = &tracks_;
  p.preintegrations = &preints_;
  p.rel = &rel_;
  p.t_ci = params_.t_ci;
  p.intrinsics = params_.intrinsics;
  p.params = params_.ba;
  p.fixed_keyframes = 1;

  for (const auto& loop : pending_loops_) {
    LoopFactor f;
    f.q_meas = loop.q_meas;
    f.t_meas = loop.t_meas;
    f.sigma = loop.sigma;
    int idx_a = -1, idx_b = -1;
    for (int i = 0; i < size(); ++i) {
      if (keyframes_[i].frame_index == loop.frame_a) idx_a = i;
      if (keyframes_[i].frame_index == loop.frame_b) idx_b = i;
    }
    if (idx_b < 0) continue;  // newer frame left the window: loop expires
    f.kf_b = idx_b;
    if (idx_a >= 0) {
      f.a_in_window = true;
      f.kf_a = idx_a;
    } else {
      f.a_in_window = false;
      bool found = false;
      for (const auto& [frame, state] : history_) {
        if (frame == loop.frame_a) {
          f.fixed_a = state;
          found = true;
        }
      }
      if (!found) throw UnknownFrame("loop frame " + std::to_string(loop.frame_a));
    }
    p.loops.push_back(f);
  }
  return p;
}

TwoStageReport SlidingWindow::two_stage_step(const MapSnapshotPtr& map) {
  TwoStageReport report;

  presolve_lambda_.clear();
  for (const auto& t : tracks_) presolve_lambda_.push_back(t.inv_depth);

  // Stage 1: visual-inertial only.
  if (size() >= 2) {
    FactorGraphProblem p1 = make_problem(false, nullptr);
    report.stage1 = solve_window(p1);
  }
  propagate_rel();
  record_history();

  // Stage 2: association, trigger, optional PSO, full problem.
  if (!map || map->empty()) return report;

  std::vector<PointPlaneFactor> factors;
  build_point_plane_factors(map, &factors, &report.score_before);
  if (report.score_before.tfn == 0) return report;  // frontend starvation: stay VIO-only

  TriggerState trig = check_trigger(report.score_before, params_.trigger);
  report.triggered = trig.triggered;
  report.score_after = report.score_before;

  if (trig.triggered && params_.pso_enabled) {
    const FeatureCloud cloud = current_feature_cloud();
    if (!cloud.empty()) {
      const Pose pred = rel_.pose(newest().frame_index);
      const SampleSpace space = adaptive_space(pred, report.score_before, scale_est_,
                                               params_.space);
      SampleCandidate predicted = space.clamp([&] {
        SampleCandidate c;
        c.position = pred.translation;
        euler_zyx(pred.rotation, &c.yaw, &c.pitch, &c.roll);
        c.scale = scale_est_;
        return c;
      }());
      PsoParams pso_params = params_.pso;
      pso_params.seed = params_.pso.seed + pso_counter_++;
      report.pso = pso_sample(cloud, *map, predicted, space, pso_params, params_.ba.assoc);
      report.pso_ran = true;
      report.pso_cloud = cloud;
      report.pso_predicted = predicted;
      report.pso_space = space;
      report.pso_seed = pso_params.seed;
      rel_.rotation = report.pso.best.rotation();
      rel_.translation = report.pso.best.position;
      scale_est_ = report.pso.best.scale;
      build_point_plane_factors(map, &factors, &report.score_after);
    }
  }

  report.point_plane_factors = static_cast<int>(factors.size());
  if (!factors.empty()) {
    FactorGraphProblem p2 = make_problem(true, map);
    p2.point_plane = std::move(factors);
    p2.optimize_rel = true;
    report.stage2 = solve_window(p2);
    report.stage2_ran = true;
  }
  record_history();
  return report;
}

SolveReport SlidingWindow::apply_loop_factor(int frame_a, int frame_b, const Pose& t_ca_cb,
                                             double sigma) {
  // Convert the camera-frame measurement to IMU frames.
  Pose t_ci = params_.t_ci;
  Pose cam_meas = t_ca_cb;
  cam_meas.from = FrameId::camera(frame_b);
  cam_meas.to = FrameId::camera(frame_a);
  Pose t_ci_b = t_ci, t_ic_a = t_ci.inverse();
  t_ci_b.from = FrameId::imu(frame_b);
  t_ci_b.to = FrameId::camera(frame_b);
  t_ic_a.from = FrameId::camera(frame_a);
  t_ic_a.to = FrameId::imu(frame_a);
  const Pose imu_meas = t_ic_a.compose(cam_meas).compose(t_ci_b);

  const bool a_known =
      std::any_of(history_.begin(), history_.end(),
                  [&](const auto& h) { return h.first == frame_a; });
  const bool b_known =
      std::any_of(keyframes_.begin(), keyframes_.end(),
                  [&](const KeyframeState& k) { return k.frame_index == frame_b; });
  if (!a_known) throw UnknownFrame("loop frame " + std::to_string(frame_a));
  if (!b_known) throw UnknownFrame("loop frame " + std::to_string(frame_b) + " not in window");

  PendingLoop loop;
  loop.frame_a = frame_a;
  loop.frame_b = frame_b;
  loop.q_meas = imu_meas.rotation;
  loop.t_meas = imu_meas.translation;
  loop.sigma = sigma;
  pending_loops_.push_back(loop);

  const Pose before = camera_pose(size() - 1);
  FactorGraphProblem p = make_problem(false, nullptr);
  const SolveReport report = solve_window(p);
  const Pose after = camera_pose(size() - 1);

  // Re-anchor the relative pose through the camera-pose change.
  const Pose rel_pose = rel_.pose(newest().frame_index);
  rel_ = RelativePose::from_pose(
      Pose(rel_pose.rotation, rel_pose.translation, before.from, rel_pose.to)
          .compose(before.inverse())
          .compose(after));
  record_history();
  return report;
}

int SlidingWindow::reject_outliers() {
  std::map<int, double> presolve;
  for (size_t i = 0; i < presolve_lambda_.size() && i < tracks_.size(); ++i) {
    presolve[tracks_[i].id] = presolve_lambda_[i];
  }
  const double lambda_min = params_.ba.lambda_min;
  std::vector<FeatureTrack> kept;
  int removed = 0;
  for (auto& t : tracks_) {
    bool reject = t.outlier;
    if (!reject && t.inv_depth <= lambda_min) reject = true;
    if (!reject) {
      auto it = presolve.find(t.id);
      if (it != presolve.end() && it->second > 0.0 &&
          std::abs(t.inv_depth - it->second) > 0.5 * it->second) {
        reject = true;
      }
    }
    if (!reject && t.observations.size() >= 2) {
      const TrackObservation* anchor_obs = t.obs_at(t.anchor);
      if (anchor_obs) {
        const Eigen::Vector2d u_i(anchor_obs->u, anchor_obs->v);
        for (const auto& obs : t.observations) {
          if (obs.frame == t.anchor) continue;
          const auto r = reprojection_residual(keyframes_[t.anchor].state,
                                               keyframes_[obs.frame].state, t.inv_depth, u_i,
                                               Eigen::Vector2d(obs.u, obs.v), params_.t_ci,
                                               params_.intrinsics);
          if (!r || r->norm() > 3.0) {
            reject = true;
            break;
          }
        }
      }
    }
    if (reject) {
      ++removed;
    } else {
      kept.push_back(std::move(t));
    }
  }
  tracks_ = std::move(kept);
  presolve_lambda_.clear();
  for (const auto& t : tracks_) presolve_lambda_.push_back(t.inv_depth);
  return removed;
}

void SlidingWindow::slide() {
  while (size() > params_.ba.window_size) {
    // Re-anchor tracks that lose their anchor keyframe.
    std::vector<FeatureTrack> kept;
    for (auto& t : tracks_) {
      if (t.anchor == 0) {
        const TrackObservation* next_obs = nullptr;
        for (const auto& o : t.observations) {
          if (o.frame > 0 && (!next_obs || o.frame < next_obs->frame)) next_obs = &o;
        }
        const TrackObservation* old_obs = t.obs_at(0);
        if (next_obs && old_obs && t.inv_depth > params_.ba.lambda_min) {
          const Vec3 dir = params_.intrinsics.unproject(old_obs->u, old_obs->v);
          const Vec3 in_c0 = camera_pose(0).act(dir / t.inv_depth);
          const Vec3 in_new = camera_pose(next_obs->frame).inverse().act(in_c0);
          if (in_new.z() > 0.05) {
            t.anchor = next_obs->frame;
            t.inv_depth = 1.0 / in_new.z();
          } else {
            continue;  // re-anchored point collapsed: drop the track
          }
        } else {
          continue;
        }
      }
      // shift window indices down
      std::vector<TrackObservation> obs;
      for (auto& o : t.observations) {
        if (o.frame == 0) continue;
        TrackObservation shifted = o;
        shifted.frame -= 1;
        obs.push_back(shifted);
      }
      if (obs.size() < 2) continue;
      t.observations = std::move(obs);
      t.anchor -= 1;
      kept.push_back(std::move(t));
    }
    tracks_ = std::move(kept);
    keyframes_.erase(keyframes_.begin());
    if (!preints_.empty()) preints_.erase(preints_.begin());
    // Loops whose newer frame has left the window expire.
    std::vector<PendingLoop> live;
    for (const auto& l : pending_loops_) {
      const bool b_alive = std::any_of(keyframes_.begin(), keyframes_.end(),
                                       [&](const KeyframeState& k) {
                                         return k.frame_index == l.frame_b;
                                       });
      if (b_alive) live.push_back(l);
    }
    pending_loops_ = std::move(live);
  }
  presolve_lambda_.clear();
  for (const auto& t : tracks_) presolve_lambda_.push_back(t.inv_depth);
}

void SlidingWindow::record_history() {
  for (const auto& kf : keyframes_) {
    bool found = false;
    for (auto& [frame, state] : history_) {
      if (frame == kf.frame_index) {
        state = kf.state;
        found = true;
        break;
      }
    }
    if (!found) history_.emplace_back(kf.frame_index, kf.state);
  }
}

}  // namespace palo
