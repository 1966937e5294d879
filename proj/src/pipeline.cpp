#include "palo/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

#include "palo/cloud_io.hpp"

namespace palo {

std::vector<LoopSpec> load_loops_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<LoopSpec> loops;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    std::stringstream ss(line);
    LoopSpec l;
    double qx, qy, qz, qw;
    if (!(ss >> l.t_a >> l.t_b >> l.translation.x() >> l.translation.y() >> l.translation.z() >>
          qx >> qy >> qz >> qw >> l.sigma)) {
      continue;
    }
    l.rotation = Quat(qw, qx, qy, qz).normalized();
    loops.push_back(l);
  }
  return loops;
}

void save_loops_csv(const std::string& path, const std::vector<LoopSpec>& loops) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "# t_a,t_b,tx,ty,tz,qx,qy,qz,qw,sigma\n";
  char buf[320];
  for (const auto& l : loops) {
    std::snprintf(buf, sizeof(buf), "%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f\n", l.t_a,
                  l.t_b, l.translation.x(), l.translation.y(), l.translation.z(), l.rotation.x(),
                  l.rotation.y(), l.rotation.z(), l.rotation.w(), l.sigma);
    out << buf;
  }
}

InitStateSpec load_init_state_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    std::stringstream ss(line);
    double qw, qx, qy, qz;
    InitStateSpec spec;
    if (ss >> qw >> qx >> qy >> qz >> spec.state.p.x() >> spec.state.p.y() >> spec.state.p.z() >>
        spec.state.v.x() >> spec.state.v.y() >> spec.state.v.z() >> spec.state.bias.accel.x() >>
        spec.state.bias.accel.y() >> spec.state.bias.accel.z() >> spec.state.bias.gyro.x() >>
        spec.state.bias.gyro.y() >> spec.state.bias.gyro.z()) {
      spec.state.q = Quat(qw, qx, qy, qz).normalized();
      return spec;
    }
  }
  throw IoError(path + ": no init state row");
}

void save_init_state_csv(const std::string& path, const InitStateSpec& spec) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "# qw,qx,qy,qz,px,py,pz,vx,vy,vz,bax,bay,baz,bgx,bgy,bgz\n";
  const auto& s = spec.state;
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%.12f,%.12f,%.12f,%.12f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,"
                "%.9f\n",
                s.q.w(), s.q.x(), s.q.y(), s.q.z(), s.p.x(), s.p.y(), s.p.z(), s.v.x(), s.v.y(),
                s.v.z(), s.bias.accel.x(), s.bias.accel.y(), s.bias.accel.z(), s.bias.gyro.x(),
                s.bias.gyro.y(), s.bias.gyro.z());
  out << buf;
}

PipelineInputs load_inputs(const RunConfig& config) {
  PipelineInputs in;
  if (!config.map_file.empty()) {
    auto map = std::make_shared<LidarMap>(config.prune_radius);
    map->insert_points(load_cloud(config.map_file));
    in.map = map->snapshot();
  } else if (!config.allow_no_map) {
    throw IoError("map_file unset (pass allow_no_map = true for VIO-only runs)");
  }
  in.imu = load_imu_csv(config.imu_file);
  in.frame_times = load_frames_csv(config.frames_file);
  in.tracks = load_tracks_csv(config.tracks_file);
  if (!config.feature_cloud_file.empty()) {
    in.init_cloud = load_feature_cloud_csv(config.feature_cloud_file);
  }
  if (!config.init_state_file.empty()) {
    in.init_state = load_init_state_csv(config.init_state_file);
  }
  if (!config.loops_file.empty()) in.loops = load_loops_csv(config.loops_file);
  if (!config.gt_file.empty()) in.ground_truth = load_tum(config.gt_file);
  return in;
}

PipelineInputs inputs_from_sim(const sim::SimData& data, bool use_noisy_imu) {
  PipelineInputs in;
  auto map = std::make_shared<LidarMap>();
  map->insert_points(data.scene.map_points);
  in.map = map->snapshot();
  in.imu = use_noisy_imu ? data.imu : data.imu_clean;
  in.frame_times = data.frame_times;
  in.tracks = data.tracks;
  in.init_cloud = data.init_cloud;
  in.init_state.state = data.gt_states_c0.front();
  Trajectory gt;
  for (size_t k = 0; k < data.gt_t_l_ck.size(); ++k) {
    gt.push_back({data.frame_times[k], data.gt_t_l_ck[k].rotation,
                  data.gt_t_l_ck[k].translation});
  }
  in.ground_truth = gt;
  return in;
}

namespace {

// Samples covering [t_prev, t_cur]; frame times coincide with sample times.
std::vector<ImuSample> slice_imu(const std::vector<ImuSample>& imu, double t_prev, double t_cur) {
  std::vector<ImuSample> out;
  for (const auto& s : imu) {
    if (s.timestamp >= t_prev - 1e-9 && s.timestamp <= t_cur + 1e-9) out.push_back(s);
  }
  return out;
}

int frame_of_time(const std::vector<double>& frame_times, double t, double tol) {
  int best = -1;
  double best_err = tol;
  for (size_t i = 0; i < frame_times.size(); ++i) {
    const double err = std::abs(frame_times[i] - t);
    if (err <= best_err) {
      best_err = err;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace

RunResult run_single(const RunConfig& config, const PipelineInputs& inputs, SamplerHook hook) {
  RunResult result;
  if (inputs.frame_times.empty()) throw InvalidSpec("no camera frames");
  if (inputs.imu.size() < 2) throw EmptyStream();

  const bool have_map = inputs.map && !inputs.map->empty();
  if (!have_map && !config.allow_no_map) {
    throw IoError("no map loaded and allow_no_map is false");
  }

  // Initialization: register the up-to-scale cloud against the map.
  SampleCandidate anchor;  // T_{L C0}
  anchor.position = Vec3(config.init_center_x, config.init_center_y, config.init_center_z);
  anchor.yaw = config.init_yaw_center_deg * M_PI / 180.0;
  if (have_map && inputs.init_cloud.size() >= 20) {
    result.init = multi_level_sample(inputs.init_cloud, *inputs.map, config.init_space(),
                                     config.init_thresholds(), config.association(),
                                     config.fine_level());
    if (!result.init.ok()) throw InitFailure();
    anchor = result.init.best;
  }

  PipelineParams params = config.pipeline();
  SlidingWindow window(params);

  // Pre-index observations and first frames per track.
  std::vector<std::vector<std::pair<int, const TrackObservation*>>> obs_by_frame(
      inputs.frame_times.size());
  std::vector<int> first_frame(inputs.tracks.size(), -1);
  for (size_t ti = 0; ti < inputs.tracks.size(); ++ti) {
    const auto& t = inputs.tracks[ti];
    for (const auto& o : t.observations) {
      if (o.frame >= 0 && o.frame < static_cast<int>(inputs.frame_times.size())) {
        obs_by_frame[o.frame].emplace_back(static_cast<int>(ti), &o);
      }
    }
    first_frame[ti] = t.first_frame();
  }

  const Vec3 gravity = config.gravity();
  const ImuNoiseParams noise = config.imu_noise();
  double ratio_sum = 0.0;
  int ratio_count = 0;

  for (int k = 0; k < static_cast<int>(inputs.frame_times.size()); ++k) {
    const double t_k = inputs.frame_times[k];

    if (k == 0) {
      KeyframeState kf;
      kf.frame_index = 0;
      kf.timestamp = t_k;
      kf.state = inputs.init_state.state;
      window.add_keyframe(kf, std::nullopt);
    } else {
      const auto span = slice_imu(inputs.imu, inputs.frame_times[k - 1], t_k);
      if (span.size() < 2) throw EmptyStream();
      const ImuState& prev = window.newest().state;
      const auto pre = preintegrate(span, prev.bias, noise);
      KeyframeState kf;
      kf.frame_index = k;
      kf.timestamp = t_k;
      kf.state = propagate_state(prev, span, gravity);
      window.add_keyframe(kf, pre);
    }

    for (const auto& [ti, obs] : obs_by_frame[k]) {
      const auto& track = inputs.tracks[ti];
      const double depth = first_frame[ti] == k ? track.depth_init
                                                : std::numeric_limits<double>::quiet_NaN();
      window.add_observation(track.id, obs->u, obs->v, depth);
    }

    if (k == 0) {
      // rel_0 = T_{L C0} o T_{C0 Cam0}
      const Pose t_l_c0 = anchor.pose(FrameId::camera_world(), FrameId::lidar_world());
      window.set_rel(RelativePose::from_pose(t_l_c0.compose(window.camera_pose(0))));
      window.set_scale_estimate(anchor.scale);
    }

    const MapSnapshotPtr map_for_stage2 =
        (config.stage2_enabled && have_map) ? inputs.map : nullptr;
    const TwoStageReport report = window.two_stage_step(map_for_stage2);

    if (report.score_before.tfn > 0) {
      ratio_sum += static_cast<double>(report.score_before.vfn) / report.score_before.tfn;
      ++ratio_count;
    }
    if (report.triggered) ++result.triggered_frames;
    if (report.pso_ran) {
      ++result.pso_invocations;
      if (hook) {
        hook(k, report.pso_cloud, inputs.map, report.pso_predicted, report.pso_space,
             report.pso_seed);
      }
    }

    // Loop factors scheduled at this frame's timestamp.
    for (const auto& loop : inputs.loops) {
      if (std::abs(loop.t_b - t_k) <= config.timestamp_tolerance) {
        const int frame_a = frame_of_time(inputs.frame_times, loop.t_a,
                                          config.timestamp_tolerance);
        if (frame_a < 0) throw UnknownFrame("loop t_a matches no frame");
        Pose meas(loop.rotation, loop.translation, FrameId::camera(k), FrameId::camera(frame_a));
        window.apply_loop_factor(frame_a, k, meas, loop.sigma);
      }
    }

    window.reject_outliers();
    window.slide();

    FrameDiagnostics diag;
    diag.frame = k;
    diag.trigger_ratio = report.score_before.tfn > 0
                             ? static_cast<double>(report.score_before.vfn) /
                                   report.score_before.tfn
                             : 1.0;
    diag.triggered = report.triggered;
    diag.iterations = report.pso.iterations;
    diag.final_fitness = report.pso_ran ? report.pso.best_fitness : 0.0;
    if (report.pso_ran) {
      diag.dx = report.pso.best.position.x() - report.pso_predicted.position.x();
      diag.dy = report.pso.best.position.y() - report.pso_predicted.position.y();
      diag.dz = report.pso.best.position.z() - report.pso_predicted.position.z();
      diag.dyaw = wrap_angle(report.pso.best.yaw - report.pso_predicted.yaw);
    }
    diag.point_plane_factors = report.point_plane_factors;
    diag.stage1_cost = report.stage1.final_cost;
    diag.stage2_cost = report.stage2.final_cost;
    diag.imu_cost = report.stage2_ran ? report.stage2.final_imu : report.stage1.final_imu;
    diag.reproj_cost =
        report.stage2_ran ? report.stage2.final_reproj : report.stage1.final_reproj;
    diag.pp_cost = report.stage2.final_point_plane;
    diag.loop_cost = report.stage2_ran ? report.stage2.final_loop : report.stage1.final_loop;
    result.diagnostics.push_back(diag);

    const Pose cam_in_l = window.rel().pose(k);
    result.trajectory.push_back({t_k, cam_in_l.rotation, cam_in_l.translation});
  }

  result.mean_valid_ratio = ratio_count > 0 ? ratio_sum / ratio_count : 0.0;
  for (const auto& t : window.tracks()) {
    if (t.outlier || t.inv_depth < config.lambda_min) continue;
    result.final_depths.push_back(1.0 / t.inv_depth);
    result.final_depth_ids.push_back(t.id);
  }
  if (inputs.ground_truth) {
    result.ate = evaluate_ate(result.trajectory, *inputs.ground_truth, config.align,
                              config.timestamp_tolerance);
  }
  return result;
}

std::vector<RunResult> run_multi(const RunConfig& base, const std::vector<RunConfig>& agent_configs,
                                 const std::vector<PipelineInputs>& agent_inputs) {
  if (agent_configs.size() != agent_inputs.size()) {
    throw InvalidSpec("agent config/input count mismatch");
  }
  (void)base;
  std::vector<std::future<RunResult>> futures;
  futures.reserve(agent_configs.size());
  for (size_t i = 0; i < agent_configs.size(); ++i) {
    futures.push_back(std::async(std::launch::async, [&, i] {
      return run_single(agent_configs[i], agent_inputs[i]);
    }));
  }
  std::vector<RunResult> results;
  results.reserve(futures.size());
  for (auto& f : futures) results.push_back(f.get());
  return results;
}

SamplerComparison compare_samplers(const RunConfig& config, const PipelineInputs& inputs) {
  SamplerComparison cmp;
  RunConfig cfg = config;
  cfg.pso_enabled = true;

  // Ground-truth camera position per frame (when available).
  auto gt_position = [&](int frame) -> std::optional<Vec3> {
    if (!inputs.ground_truth) return std::nullopt;
    const double t = inputs.frame_times[frame];
    for (const auto& e : *inputs.ground_truth) {
      if (std::abs(e.t - t) <= cfg.timestamp_tolerance) return e.translation;
    }
    return std::nullopt;
  };

  const AssociationParams assoc = cfg.association();
  auto hook = [&](int frame, const FeatureCloud& cloud, const MapSnapshotPtr& map,
                  const SampleCandidate& predicted, const SampleSpace& space,
                  uint64_t event_seed) {
    const auto gt = gt_position(frame);
    const double fit_before = fitness(predicted, cloud, *map, assoc);
    PsoParams pso_params = cfg.pipeline().pso;
    pso_params.seed = event_seed;

    auto run_method = [&](const std::string& name, auto&& fn) {
      const auto start = std::chrono::steady_clock::now();
      SampleResult res = fn();
      const auto stop = std::chrono::steady_clock::now();
      SamplerTrialRow row;
      row.frame = frame;
      row.method = name;
      row.time_ms = std::chrono::duration<double, std::milli>(stop - start).count();
      row.fitness_before = fit_before;
      row.fitness_after = res.best_fitness;
      row.evaluations = res.evaluations;
      row.success = res.best_fitness < fit_before;
      if (gt) row.pose_error = (res.best.position - *gt).norm();
      cmp.rows.push_back(row);
      return res;
    };

    const SampleResult pso = run_method("PSO", [&] {
      return pso_sample(cloud, *map, predicted, space, pso_params, assoc);
    });
    run_method("GRS", [&] {
      return greedy_random_sample(cloud, *map, predicted, space, pso.evaluations,
                                  event_seed ^ 0x9e3779b97f4a7c15ULL, assoc);
    });
    run_method("AUS", [&] { return uniform_grid_sample(cloud, *map, predicted, space, assoc); });
    ++cmp.events;
  };

  run_single(cfg, inputs, hook);

  for (const std::string& method : {"PSO", "GRS", "AUS"}) {
    SamplerComparison::MethodStats st;
    st.method = method;
    double err_sq = 0.0;
    int err_n = 0, success = 0, n = 0;
    for (const auto& row : cmp.rows) {
      if (row.method != method) continue;
      ++n;
      st.mean_time_ms += row.time_ms;
      if (row.success) ++success;
      if (std::isfinite(row.pose_error)) {
        err_sq += row.pose_error * row.pose_error;
        ++err_n;
      }
      st.mean_valid_ratio += std::max(0.0, 1.0 - row.fitness_after);
    }
    if (n > 0) {
      st.mean_time_ms /= n;
      st.success_rate = static_cast<double>(success) / n;
      st.mean_valid_ratio /= n;
    }
    if (err_n > 0) st.rmse = std::sqrt(err_sq / err_n);
    st.sample_count = n;
    cmp.stats.push_back(st);
  }

  // Head-to-head wins of PSO over GRS per event.
  int pso_wins = 0;
  for (int e = 0; e < cmp.events; ++e) {
    const auto& pso_row = cmp.rows[3 * e];
    const auto& grs_row = cmp.rows[3 * e + 1];
    if (std::isfinite(pso_row.pose_error) && std::isfinite(grs_row.pose_error) &&
        pso_row.pose_error <= grs_row.pose_error) {
      ++pso_wins;
    }
  }
  if (!cmp.stats.empty()) cmp.stats[0].wins = pso_wins;
  return cmp;
}

void write_run_outputs(const std::string& out_dir, const RunConfig& config,
                       const RunResult& result) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream echo(out_dir + "/config.echo");
    echo << echo_config(config);
  }
  save_tum(out_dir + "/trajectory.tum", result.trajectory);
  {
    std::ofstream diag(out_dir + "/diagnostics.csv");
    diag << "frame,trigger_ratio,triggered,iterations,final_fitness,dx,dy,dz,dyaw,"
            "point_plane_factors,stage1_cost,stage2_cost,imu_cost,reproj_cost,pp_cost,loop_cost\n";
    char buf[512];
    for (const auto& d : result.diagnostics) {
      std::snprintf(buf, sizeof(buf),
                    "%d,%.6f,%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                    d.frame, d.trigger_ratio, d.triggered ? 1 : 0, d.iterations, d.final_fitness,
                    d.dx, d.dy, d.dz, d.dyaw, d.point_plane_factors, d.stage1_cost, d.stage2_cost,
                    d.imu_cost, d.reproj_cost, d.pp_cost, d.loop_cost);
      diag << buf;
    }
  }
  if (result.ate) {
    std::ofstream ate(out_dir + "/ate.csv");
    ate << "# rmse," << result.ate->rmse << "\n# mean," << result.ate->mean << "\n# max,"
        << result.ate->max << "\ntimestamp,error\n";
    char buf[96];
    for (size_t i = 0; i < result.ate->per_frame.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.9f,%.9f\n", result.ate->timestamps[i],
                    result.ate->per_frame[i]);
      ate << buf;
    }
  }
  if (!result.sampler_trials.empty()) {
    std::ofstream s(out_dir + "/sampler_trials.csv");
    s << "frame,method,time_ms,fitness_before,fitness_after,pose_error,evaluations,success\n";
    char buf[256];
    for (const auto& row : result.sampler_trials) {
      std::snprintf(buf, sizeof(buf), "%d,%s,%.3f,%.6f,%.6f,%.6f,%zu,%d\n", row.frame,
                    row.method.c_str(), row.time_ms, row.fitness_before, row.fitness_after,
                    row.pose_error, row.evaluations, row.success ? 1 : 0);
      s << buf;
    }
  }
}

}  // namespace palo
