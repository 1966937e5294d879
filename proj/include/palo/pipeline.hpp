/**
 * @file pipeline.hpp
 * @brief Single- and multi-agent run orchestration: initialization, the
 *        per-frame two-stage loop, loop-factor application, evaluation and
 *        diagnostics emission.
 */
#pragma once

#include <functional>
#include <optional>

#include "palo/config.hpp"
#include "palo/sim_world.hpp"
#include "palo/trajectory.hpp"

namespace palo {

struct LoopSpec {
  double t_a{0.0}, t_b{0.0};
  Quat rotation{Quat::Identity()};  ///< measured T_{Ca <- Cb}
  Vec3 translation{Vec3::Zero()};
  double sigma{1e-2};
};

/// Loop pairs CSV: `t_a,t_b,tx,ty,tz,qx,qy,qz,qw,sigma`.
std::vector<LoopSpec> load_loops_csv(const std::string& path);
void save_loops_csv(const std::string& path, const std::vector<LoopSpec>& loops);

/// First-keyframe state in C0 plus the initialization search inputs.
struct InitStateSpec {
  ImuState state;  ///< pose/velocity/bias of the first frame
};

InitStateSpec load_init_state_csv(const std::string& path);
void save_init_state_csv(const std::string& path, const InitStateSpec& spec);

/// In-memory inputs of one agent run (loaded from files or simulator data).
struct PipelineInputs {
  MapSnapshotPtr map;  ///< null only with allow_no_map
  std::vector<ImuSample> imu;
  std::vector<double> frame_times;
  std::vector<Track> tracks;
  FeatureCloud init_cloud;
  InitStateSpec init_state;
  std::vector<LoopSpec> loops;
  std::optional<Trajectory> ground_truth;  ///< camera poses in L
};

/// Builds PipelineInputs from the file paths in a config.
PipelineInputs load_inputs(const RunConfig& config);

/// Converts simulator output into pipeline inputs (ground truth included).
PipelineInputs inputs_from_sim(const sim::SimData& data, bool use_noisy_imu = true);

/// One sampler-comparison record (one trigger event, one method).
struct SamplerTrialRow {
  int frame{0};
  std::string method;
  double time_ms{0.0};
  double fitness_before{0.0};
  double fitness_after{0.0};
  double pose_error{std::numeric_limits<double>::quiet_NaN()};  ///< vs gt, when known
  std::size_t evaluations{0};
  bool success{false};
};

/// Per-frame diagnostics row (the trigger CSV contract).
struct FrameDiagnostics {
  int frame{0};
  double trigger_ratio{1.0};
  bool triggered{false};
  int iterations{0};
  double final_fitness{0.0};
  double dx{0.0}, dy{0.0}, dz{0.0}, dyaw{0.0};  ///< PSO correction
  int point_plane_factors{0};
  double stage1_cost{0.0}, stage2_cost{0.0};
  double imu_cost{0.0}, reproj_cost{0.0}, pp_cost{0.0}, loop_cost{0.0};
};

struct RunResult {
  InitResult init;
  Trajectory trajectory;  ///< camera in LidarWorld, one entry per frame
  std::vector<FrameDiagnostics> diagnostics;
  std::vector<SamplerTrialRow> sampler_trials;
  std::optional<AteReport> ate;          ///< when ground truth is available
  int pso_invocations{0};
  int triggered_frames{0};
  double mean_valid_ratio{0.0};
  std::vector<double> final_depths;      ///< surviving-track depth estimates
  std::vector<int> final_depth_ids;      ///< matching track ids
};

/// Hook invoked at every trigger event (sampler comparison harness).
using SamplerHook = std::function<void(int frame, const FeatureCloud& cloud,
                                       const MapSnapshotPtr& map, const SampleCandidate& predicted,
                                       const SampleSpace& space, uint64_t event_seed)>;

/// Runs the full pipeline on one agent: init (when a map and cloud are
/// present), then per frame preintegration, prediction, two-stage solve,
/// outlier rejection and window slide. Throws InitFailure via Error when
/// initialization fails and the map is mandatory.
RunResult run_single(const RunConfig& config, const PipelineInputs& inputs,
                     SamplerHook hook = nullptr);

struct InitFailure : Error {
  InitFailure() : Error("initialization returned Failure") {}
};

/// Per-agent inputs share the map snapshot; each agent runs independently.
std::vector<RunResult> run_multi(const RunConfig& base,
                                 const std::vector<RunConfig>& agent_configs,
                                 const std::vector<PipelineInputs>& agent_inputs);

struct SamplerComparison {
  struct MethodStats {
    std::string method;
    double mean_time_ms{0.0};
    double rmse{0.0};           ///< pose error over events (when gt known)
    double success_rate{0.0};   ///< fitness improved vs before
    double mean_valid_ratio{0.0};
    int sample_count{0};
    int wins{0};                ///< events where this method's error <= PSO-opponent
  };
  std::vector<SamplerTrialRow> rows;
  std::vector<MethodStats> stats;  ///< PSO, GRS, AUS
  int events{0};
};

/// Runs the pipeline once; at each trigger event executes PSO, greedy random
/// sampling and uniform grid sampling on identical inputs and budgets.
SamplerComparison compare_samplers(const RunConfig& config, const PipelineInputs& inputs);

/// Writes run artifacts (config echo, trajectory, diagnostics CSVs).
void write_run_outputs(const std::string& out_dir, const RunConfig& config,
                       const RunResult& result);

}  // namespace palo
