#include "palo/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "palo/errors.hpp"

namespace palo {

namespace {

constexpr double kDeg = M_PI / 180.0;

struct Entry {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

const std::map<std::string, Entry>& registry() {
  static const std::map<std::string, Entry> reg = [] {
    std::map<std::string, Entry> r;
    auto add_str = [&r](const std::string& key, std::string RunConfig::* field) {
      r[key] = {[field](RunConfig& c, const std::string& v) { c.*field = v; },
                [field](const RunConfig& c) { return c.*field; }};
    };
    auto add_dbl = [&r](const std::string& key, double RunConfig::* field) {
      r[key] = {[field, key](RunConfig& c, const std::string& v) {
                  try {
                    c.*field = std::stod(v);
                  } catch (...) {
                    throw ConfigError("bad numeric value for " + key + ": " + v);
                  }
                },
                [field](const RunConfig& c) { return fmt_double(c.*field); }};
    };
    auto add_int = [&r](const std::string& key, int RunConfig::* field) {
      r[key] = {[field, key](RunConfig& c, const std::string& v) {
                  try {
                    c.*field = std::stoi(v);
                  } catch (...) {
                    throw ConfigError("bad integer value for " + key + ": " + v);
                  }
                },
                [field](const RunConfig& c) { return std::to_string(c.*field); }};
    };
    auto add_u64 = [&r](const std::string& key, uint64_t RunConfig::* field) {
      r[key] = {[field, key](RunConfig& c, const std::string& v) {
                  try {
                    c.*field = std::stoull(v);
                  } catch (...) {
                    throw ConfigError("bad integer value for " + key + ": " + v);
                  }
                },
                [field](const RunConfig& c) { return std::to_string(c.*field); }};
    };
    auto add_bool = [&r](const std::string& key, bool RunConfig::* field) {
      r[key] = {[field, key](RunConfig& c, const std::string& v) {
                  if (v == "true" || v == "1") c.*field = true;
                  else if (v == "false" || v == "0") c.*field = false;
                  else throw ConfigError("bad boolean value for " + key + ": " + v);
                },
                [field](const RunConfig& c) { return c.*field ? "true" : "false"; }};
    };

    add_str("map_file", &RunConfig::map_file);
    add_str("imu_file", &RunConfig::imu_file);
    add_str("tracks_file", &RunConfig::tracks_file);
    add_str("frames_file", &RunConfig::frames_file);
    add_str("feature_cloud_file", &RunConfig::feature_cloud_file);
    add_str("gt_file", &RunConfig::gt_file);
    add_str("loops_file", &RunConfig::loops_file);
    add_str("init_state_file", &RunConfig::init_state_file);
    add_str("out_dir", &RunConfig::out_dir);
    add_str("coupling", &RunConfig::coupling);

    add_dbl("fx", &RunConfig::fx);
    add_dbl("fy", &RunConfig::fy);
    add_dbl("cx", &RunConfig::cx);
    add_dbl("cy", &RunConfig::cy);
    add_int("image_width", &RunConfig::image_width);
    add_int("image_height", &RunConfig::image_height);
    add_dbl("t_ci_qw", &RunConfig::t_ci_qw);
    add_dbl("t_ci_qx", &RunConfig::t_ci_qx);
    add_dbl("t_ci_qy", &RunConfig::t_ci_qy);
    add_dbl("t_ci_qz", &RunConfig::t_ci_qz);
    add_dbl("t_ci_x", &RunConfig::t_ci_x);
    add_dbl("t_ci_y", &RunConfig::t_ci_y);
    add_dbl("t_ci_z", &RunConfig::t_ci_z);

    add_dbl("plane_fit_threshold", &RunConfig::plane_fit_threshold);
    add_dbl("valid_match_threshold", &RunConfig::valid_match_threshold);
    add_int("neighbor_count", &RunConfig::neighbor_count);
    add_dbl("prune_radius", &RunConfig::prune_radius);

    add_dbl("sigma_a", &RunConfig::sigma_a);
    add_dbl("sigma_w", &RunConfig::sigma_w);
    add_dbl("sigma_ba", &RunConfig::sigma_ba);
    add_dbl("sigma_bw", &RunConfig::sigma_bw);
    add_dbl("gravity_x", &RunConfig::gravity_x);
    add_dbl("gravity_y", &RunConfig::gravity_y);
    add_dbl("gravity_z", &RunConfig::gravity_z);

    add_dbl("init_center_x", &RunConfig::init_center_x);
    add_dbl("init_center_y", &RunConfig::init_center_y);
    add_dbl("init_center_z", &RunConfig::init_center_z);
    add_dbl("init_yaw_center_deg", &RunConfig::init_yaw_center_deg);
    add_dbl("init_extent", &RunConfig::init_extent);
    add_dbl("init_position_res", &RunConfig::init_position_res);
    add_dbl("init_yaw_half_deg", &RunConfig::init_yaw_half_deg);
    add_dbl("init_yaw_res_deg", &RunConfig::init_yaw_res_deg);
    add_dbl("init_scale_min", &RunConfig::init_scale_min);
    add_dbl("init_scale_max", &RunConfig::init_scale_max);
    add_dbl("init_scale_res", &RunConfig::init_scale_res);
    add_dbl("fine_position_half", &RunConfig::fine_position_half);
    add_dbl("fine_position_res", &RunConfig::fine_position_res);
    add_dbl("fine_yaw_half_deg", &RunConfig::fine_yaw_half_deg);
    add_dbl("fine_yaw_res_deg", &RunConfig::fine_yaw_res_deg);
    add_dbl("fine_scale_half", &RunConfig::fine_scale_half);
    add_dbl("fine_scale_res", &RunConfig::fine_scale_res);
    add_dbl("m_coarse_ratio", &RunConfig::m_coarse_ratio);
    add_dbl("m_fine_ratio", &RunConfig::m_fine_ratio);
    add_dbl("eps_coarse", &RunConfig::eps_coarse);
    add_dbl("eps_fine", &RunConfig::eps_fine);
    add_int("init_max_cells", &RunConfig::init_max_cells);

    add_int("window_size", &RunConfig::window_size);
    add_dbl("huber_reproj_px", &RunConfig::huber_reproj_px);
    add_dbl("pixel_sigma", &RunConfig::pixel_sigma);
    add_dbl("point_plane_weight_c", &RunConfig::point_plane_weight_c);
    add_dbl("lambda_min", &RunConfig::lambda_min);
    add_int("max_iterations", &RunConfig::max_iterations);
    add_dbl("cost_decrease_tol", &RunConfig::cost_decrease_tol);
    add_dbl("default_feature_depth", &RunConfig::default_feature_depth);

    add_dbl("tau_trigger", &RunConfig::tau_trigger);
    add_dbl("space_base_extent", &RunConfig::space_base_extent);
    add_dbl("space_kappa", &RunConfig::space_kappa);
    add_dbl("space_yaw_min_deg", &RunConfig::space_yaw_min_deg);
    add_dbl("space_yaw_max_deg", &RunConfig::space_yaw_max_deg);
    add_dbl("space_position_res", &RunConfig::space_position_res);
    add_dbl("space_yaw_res_deg", &RunConfig::space_yaw_res_deg);
    add_dbl("space_scale_half", &RunConfig::space_scale_half);
    add_int("pso_particles", &RunConfig::pso_particles);
    add_int("pso_iterations", &RunConfig::pso_iterations);
    add_dbl("pso_w", &RunConfig::pso_w);
    add_dbl("pso_c1", &RunConfig::pso_c1);
    add_dbl("pso_c2", &RunConfig::pso_c2);
    add_int("pso_stagnation", &RunConfig::pso_stagnation);
    add_bool("pso_enabled", &RunConfig::pso_enabled);

    add_u64("seed", &RunConfig::seed);
    add_int("agent_count", &RunConfig::agent_count);
    add_bool("allow_no_map", &RunConfig::allow_no_map);
    add_bool("align", &RunConfig::align);
    add_dbl("timestamp_tolerance", &RunConfig::timestamp_tolerance);
    add_bool("stage2_enabled", &RunConfig::stage2_enabled);
    return r;
  }();
  return reg;
}

void set_key(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& reg = registry();
  const auto it = reg.find(key);
  if (it == reg.end()) throw ConfigError("unknown key: " + key);
  it->second.set(config, value);
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  RunConfig config;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    set_key(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config;
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override needs key=value: " + kv);
    set_key(config, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
}

std::string echo_config(const RunConfig& config) {
  std::string out;
  for (const auto& [key, entry] : registry()) {
    out += key + " = " + entry.get(config) + "\n";
  }
  return out;
}

PinholeIntrinsics RunConfig::intrinsics() const {
  PinholeIntrinsics k;
  k.fx = fx;
  k.fy = fy;
  k.cx = cx;
  k.cy = cy;
  k.width = image_width;
  k.height = image_height;
  return k;
}

Pose RunConfig::t_ci() const {
  return Pose(Quat(t_ci_qw, t_ci_qx, t_ci_qy, t_ci_qz), Vec3(t_ci_x, t_ci_y, t_ci_z),
              FrameId::imu(-1), FrameId::camera(-1));
}

AssociationParams RunConfig::association() const {
  AssociationParams a;
  a.neighbor_count = neighbor_count;
  a.plane_fit_threshold = plane_fit_threshold;
  a.valid_match_threshold = valid_match_threshold;
  return a;
}

ImuNoiseParams RunConfig::imu_noise() const {
  ImuNoiseParams n;
  n.sigma_a = sigma_a;
  n.sigma_w = sigma_w;
  n.sigma_ba = sigma_ba;
  n.sigma_bw = sigma_bw;
  return n;
}

BaParams RunConfig::ba() const {
  BaParams b;
  b.window_size = window_size;
  b.huber_reproj_px = huber_reproj_px;
  b.pixel_sigma = pixel_sigma;
  b.point_plane_weight_c = point_plane_weight_c;
  b.lambda_min = lambda_min;
  b.max_iterations = max_iterations;
  b.cost_decrease_tol = cost_decrease_tol;
  b.mode = coupling == "loose" ? CouplingMode::LooselyCoupled : CouplingMode::TightlyCoupled;
  b.gravity = gravity();
  b.assoc = association();
  b.default_feature_depth = default_feature_depth;
  return b;
}

PipelineParams RunConfig::pipeline() const {
  PipelineParams p;
  p.ba = ba();
  p.intrinsics = intrinsics();
  p.t_ci = t_ci();
  p.trigger.tau_trigger = tau_trigger;
  p.space.base_extent = space_base_extent;
  p.space.kappa = space_kappa;
  p.space.yaw_min = space_yaw_min_deg * kDeg;
  p.space.yaw_max = space_yaw_max_deg * kDeg;
  p.space.position_resolution = space_position_res;
  p.space.yaw_resolution = space_yaw_res_deg * kDeg;
  p.space.scale_half = space_scale_half;
  p.pso.m = pso_particles;
  p.pso.g_max = pso_iterations;
  p.pso.w = pso_w;
  p.pso.c1 = pso_c1;
  p.pso.c2 = pso_c2;
  p.pso.stagnation_limit = pso_stagnation;
  p.pso.seed = seed;
  p.pso_enabled = pso_enabled;
  return p;
}

SampleSpace RunConfig::init_space() const {
  SampleSpace s;
  s.center = Vec3(init_center_x, init_center_y, init_center_z);
  s.half_extent = Vec3::Constant(init_extent);
  s.position_resolution = Vec3::Constant(init_position_res);
  s.yaw_center = init_yaw_center_deg * kDeg;
  s.yaw_half_range = init_yaw_half_deg * kDeg;
  s.yaw_resolution = init_yaw_res_deg * kDeg;
  s.scale_min = init_scale_min;
  s.scale_max = init_scale_max;
  s.scale_resolution = init_scale_res;
  return s;
}

InitThresholds RunConfig::init_thresholds() const {
  InitThresholds t;
  t.m_coarse_ratio = m_coarse_ratio;
  t.m_fine_ratio = m_fine_ratio;
  t.eps_coarse = eps_coarse;
  t.eps_fine = eps_fine;
  t.max_spawned_cells = init_max_cells;
  return t;
}

FineLevelParams RunConfig::fine_level() const {
  FineLevelParams f;
  f.position_half = fine_position_half;
  f.position_resolution = fine_position_res;
  f.yaw_half = fine_yaw_half_deg * kDeg;
  f.yaw_resolution = fine_yaw_res_deg * kDeg;
  f.scale_half = fine_scale_half;
  f.scale_resolution = fine_scale_res;
  return f;
}

}  // namespace palo
