/**
 * @file imu.hpp
 * @brief IMU preintegration between keyframes and the 15-dimensional
 *        preintegration residual used by the sliding-window backend.
 *
 * Preintegrated quantities (alpha, beta, gamma) are expressed in the earlier
 * keyframe's IMU frame and are gravity-free; gravity re-enters in the
 * residual. Integration uses the midpoint rule between consecutive samples.
 * Error-state order everywhere: [d_alpha, d_beta, d_theta, d_ba, d_bg].
 */
#pragma once

#include <string>
#include <vector>

#include "palo/geometry.hpp"

namespace palo {

struct ImuSample {
  double timestamp{0.0};       ///< seconds, strictly increasing per stream
  Vec3 accel{Vec3::Zero()};    ///< m/s^2, specific force
  Vec3 gyro{Vec3::Zero()};     ///< rad/s
};

struct ImuBias {
  Vec3 accel{Vec3::Zero()};  ///< b_a, m/s^2
  Vec3 gyro{Vec3::Zero()};   ///< b_w, rad/s
};

/// Continuous-time noise densities plus bias random-walk densities.
struct ImuNoiseParams {
  double sigma_a{2e-3};    ///< m/s^2/sqrt(Hz)
  double sigma_w{1.7e-4};  ///< rad/s/sqrt(Hz)
  double sigma_ba{1e-4};   ///< m/s^3/sqrt(Hz)
  double sigma_bw{1e-5};   ///< rad/s^2/sqrt(Hz)
};

/// Accumulated preintegral between two keyframes.
struct PreintegratedImu {
  Vec3 alpha{Vec3::Zero()};        ///< position preintegral, m
  Vec3 beta{Vec3::Zero()};         ///< velocity preintegral, m/s
  Quat gamma{Quat::Identity()};    ///< rotation preintegral
  double dt_total{0.0};            ///< seconds
  ImuBias bias_lin;                ///< linearization point
  Eigen::Matrix<double, 15, 15> covariance{Eigen::Matrix<double, 15, 15>::Zero()};
  Eigen::Matrix<double, 15, 6> jacobian_wrt_bias{Eigen::Matrix<double, 15, 6>::Zero()};

  // Convenience bias-Jacobian blocks (columns: [d_ba, d_bg]).
  Mat3 dalpha_dba() const { return jacobian_wrt_bias.block<3, 3>(0, 0); }
  Mat3 dalpha_dbg() const { return jacobian_wrt_bias.block<3, 3>(0, 3); }
  Mat3 dbeta_dba() const { return jacobian_wrt_bias.block<3, 3>(3, 0); }
  Mat3 dbeta_dbg() const { return jacobian_wrt_bias.block<3, 3>(3, 3); }
  Mat3 dgamma_dbg() const { return jacobian_wrt_bias.block<3, 3>(6, 3); }
};

/// Midpoint preintegration of a sample stream at a fixed bias linearization
/// point, with first-order covariance propagation and bias Jacobians.
/// Requires >= 2 samples with strictly increasing timestamps.
PreintegratedImu preintegrate(const std::vector<ImuSample>& samples, const ImuBias& bias,
                              const ImuNoiseParams& noise);

/// First-order bias update of an existing preintegral. Throws
/// RepropagationRequired when |new_bias - bias_lin| exceeds the threshold.
PreintegratedImu correct_for_bias(const PreintegratedImu& pre, const ImuBias& new_bias,
                                  double relinearization_threshold = 0.1);

/// Keyframe state as seen by the IMU factor: IMU-frame pose in C0 plus
/// velocity and biases.
struct ImuState {
  Quat q{Quat::Identity()};  ///< q_{C0 Ik}
  Vec3 p{Vec3::Zero()};      ///< p_{C0 Ik}
  Vec3 v{Vec3::Zero()};      ///< v in C0
  ImuBias bias;
};

/// 15-vector preintegration residual [d_alpha; d_beta; d_theta; d_ba; d_bg]
/// between consecutive states, with the preintegral bias-corrected to the
/// state-k bias. Jacobians (optional) are with respect to the on-manifold
/// state perturbations [dp, dtheta, dv, dba, dbg] of k and k+1.
Eigen::Matrix<double, 15, 1> imu_residual(const ImuState& state_k, const ImuState& state_k1,
                                          const PreintegratedImu& pre, const Vec3& gravity,
                                          Eigen::Matrix<double, 15, 15>* jac_k = nullptr,
                                          Eigen::Matrix<double, 15, 15>* jac_k1 = nullptr);

/// Propagates a world-frame state through a sample stream with gravity,
/// using the same midpoint scheme as preintegrate. The result is exactly
/// consistent with imu_residual: states produced here have zero residual
/// against the preintegral of the same samples.
ImuState propagate_state(const ImuState& start, const std::vector<ImuSample>& samples,
                         const Vec3& gravity);

/// EuRoC-layout IMU CSV: `timestamp_ns,wx,wy,wz,ax,ay,az`, header tolerated.
std::vector<ImuSample> load_imu_csv(const std::string& path);
void save_imu_csv(const std::string& path, const std::vector<ImuSample>& samples);

}  // namespace palo
