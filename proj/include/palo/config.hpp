/**
 * @file config.hpp
 * @brief Flat key-value run configuration: file paths, intrinsics, extrinsic,
 *        thresholds, solver and sampler parameters, seeds.
 *
 * Every module default is overridable; unknown keys are rejected; the fully
 * resolved configuration is echoed into the output directory.
 */
#pragma once

#include <string>
#include <vector>

#include "palo/ba_backend.hpp"
#include "palo/init_sampler.hpp"

namespace palo {

struct RunConfig {
  // ---- files -------------------------------------------------------------
  std::string map_file;
  std::string imu_file;
  std::string tracks_file;
  std::string frames_file;
  std::string feature_cloud_file;
  std::string gt_file;
  std::string loops_file;
  std::string init_state_file;
  std::string out_dir{"run_out"};

  // ---- camera / extrinsics ------------------------------------------------
  double fx{458.0}, fy{457.0}, cx{320.0}, cy{240.0};
  int image_width{640}, image_height{480};
  // T_CI: maps IMU coordinates into camera coordinates
  double t_ci_qw{1.0}, t_ci_qx{0.0}, t_ci_qy{0.0}, t_ci_qz{0.0};
  double t_ci_x{0.0}, t_ci_y{0.0}, t_ci_z{0.0};

  // ---- map / association --------------------------------------------------
  double plane_fit_threshold{0.10};
  double valid_match_threshold{0.10};
  int neighbor_count{5};
  double prune_radius{60.0};

  // ---- imu ------------------------------------------------------------------
  double sigma_a{2e-3}, sigma_w{1.7e-4}, sigma_ba{1e-4}, sigma_bw{1e-5};
  double gravity_x{0.0}, gravity_y{0.0}, gravity_z{-9.81};

  // ---- initialization search ----------------------------------------------
  double init_center_x{0.0}, init_center_y{0.0}, init_center_z{0.0};
  double init_yaw_center_deg{0.0};
  double init_extent{2.0};            ///< half extent, m (paper space: 4x4x4)
  double init_position_res{0.5};
  double init_yaw_half_deg{60.0};     ///< paper space: 120 deg span
  double init_yaw_res_deg{10.0};
  double init_scale_min{1.0}, init_scale_max{1.0}, init_scale_res{0.1};
  double fine_position_half{0.25}, fine_position_res{0.0625};
  double fine_yaw_half_deg{6.0}, fine_yaw_res_deg{2.0};
  double fine_scale_half{0.1}, fine_scale_res{0.025};
  double m_coarse_ratio{0.3}, m_fine_ratio{0.5};
  double eps_coarse{1e9}, eps_fine{1e9};
  int init_max_cells{3};

  // ---- backend ---------------------------------------------------------------
  int window_size{11};
  double huber_reproj_px{1.0};
  double pixel_sigma{1.0};
  double point_plane_weight_c{3.0};
  double lambda_min{1e-3};
  int max_iterations{20};
  double cost_decrease_tol{1e-6};
  std::string coupling{"tight"};  ///< "tight" | "loose"
  double default_feature_depth{2.0};

  // ---- trigger / sampler -----------------------------------------------------
  double tau_trigger{0.30};
  double space_base_extent{0.5};
  double space_kappa{2.0};
  double space_yaw_min_deg{6.0}, space_yaw_max_deg{20.0};
  double space_position_res{0.0625};
  double space_yaw_res_deg{2.0};
  double space_scale_half{0.05};
  int pso_particles{10};
  int pso_iterations{30};
  double pso_w{0.4}, pso_c1{1.0}, pso_c2{1.5};
  int pso_stagnation{8};
  bool pso_enabled{true};

  // ---- run ----------------------------------------------------------------
  uint64_t seed{1};
  int agent_count{1};
  bool allow_no_map{false};
  bool align{true};
  double timestamp_tolerance{0.010};
  bool stage2_enabled{true};

  // ---- derived views --------------------------------------------------------
  PinholeIntrinsics intrinsics() const;
  Pose t_ci() const;
  Vec3 gravity() const { return {gravity_x, gravity_y, gravity_z}; }
  AssociationParams association() const;
  ImuNoiseParams imu_noise() const;
  BaParams ba() const;
  PipelineParams pipeline() const;
  SampleSpace init_space() const;
  InitThresholds init_thresholds() const;
  FineLevelParams fine_level() const;
};

/// Parses `key = value` lines ('#' comments). Unknown keys throw ConfigError.
RunConfig load_config(const std::string& path);

/// Applies `key=value` overrides on top of an existing config.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);

/// Serializes every key in sorted order (the echo format, itself loadable).
std::string echo_config(const RunConfig& config);

}  // namespace palo
