#include "palo/imu.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "palo/errors.hpp"

namespace palo {

namespace {

// Hamilton product matrices over [w; v] coefficients: a*b = QL(a) b = QR(b) a.
Eigen::Matrix4d quat_left(const Quat& a) {
  Eigen::Matrix4d m;
  m(0, 0) = a.w();
  m.block<1, 3>(0, 1) = -a.vec().transpose();
  m.block<3, 1>(1, 0) = a.vec();
  m.block<3, 3>(1, 1) = a.w() * Mat3::Identity() + skew(a.vec());
  return m;
}

Eigen::Matrix4d quat_right(const Quat& b) {
  Eigen::Matrix4d m;
  m(0, 0) = b.w();
  m.block<1, 3>(0, 1) = -b.vec().transpose();
  m.block<3, 1>(1, 0) = b.vec();
  m.block<3, 3>(1, 1) = b.w() * Mat3::Identity() - skew(b.vec());
  return m;
}

}  // namespace

PreintegratedImu preintegrate(const std::vector<ImuSample>& samples, const ImuBias& bias,
                              const ImuNoiseParams& noise) {
  if (samples.size() < 2) throw EmptyStream();

  PreintegratedImu pre;
  pre.bias_lin = bias;
  Eigen::Matrix<double, 15, 15> jac = Eigen::Matrix<double, 15, 15>::Identity();

  for (size_t i = 0; i + 1 < samples.size(); ++i) {
    const ImuSample& s0 = samples[i];
    const ImuSample& s1 = samples[i + 1];
    const double dt = s1.timestamp - s0.timestamp;
    if (dt <= 0.0) {
      throw NonMonotoneTimestamps("at sample " + std::to_string(i + 1));
    }
    const double dt2 = dt * dt;

    const Vec3 w_mid = 0.5 * (s0.gyro + s1.gyro) - bias.gyro;
    const Vec3 a0_b = s0.accel - bias.accel;
    const Vec3 a1_b = s1.accel - bias.accel;

    const Mat3 r0 = pre.gamma.toRotationMatrix();
    const Quat gamma1 =
        (pre.gamma * Quat(1.0, 0.5 * w_mid.x() * dt, 0.5 * w_mid.y() * dt, 0.5 * w_mid.z() * dt))
            .normalized();
    const Mat3 r1 = gamma1.toRotationMatrix();

    const Vec3 a_mid = 0.5 * (r0 * a0_b + r1 * a1_b);

    // Midpoint error-state transition; order [d_alpha, d_beta, d_theta, d_ba, d_bg].
    const Mat3 I3 = Mat3::Identity();
    const Mat3 a0x = skew(a0_b);
    const Mat3 a1x = skew(a1_b);
    const Mat3 wx = skew(w_mid);
    const Mat3 dtheta_part = r0 * a0x + r1 * a1x * (I3 - wx * dt);

    Eigen::Matrix<double, 15, 15> F = Eigen::Matrix<double, 15, 15>::Identity();
    F.block<3, 3>(0, 3) = I3 * dt;
    F.block<3, 3>(0, 6) = -0.25 * dtheta_part * dt2;
    F.block<3, 3>(0, 9) = -0.25 * (r0 + r1) * dt2;
    F.block<3, 3>(0, 12) = 0.25 * r1 * a1x * dt2 * dt;
    F.block<3, 3>(3, 6) = -0.5 * dtheta_part * dt;
    F.block<3, 3>(3, 9) = -0.5 * (r0 + r1) * dt;
    F.block<3, 3>(3, 12) = 0.5 * r1 * a1x * dt * dt;
    F.block<3, 3>(6, 6) = I3 - wx * dt;
    F.block<3, 3>(6, 12) = -I3 * dt;

    // Noise input [na0, nw0, na1, nw1, nba, nbw].
    Eigen::Matrix<double, 15, 18> V = Eigen::Matrix<double, 15, 18>::Zero();
    V.block<3, 3>(0, 0) = 0.25 * r0 * dt2;
    V.block<3, 3>(0, 3) = -0.125 * r1 * a1x * dt2 * dt;
    V.block<3, 3>(0, 6) = 0.25 * r1 * dt2;
    V.block<3, 3>(0, 9) = V.block<3, 3>(0, 3);
    V.block<3, 3>(3, 0) = 0.5 * r0 * dt;
    V.block<3, 3>(3, 3) = -0.25 * r1 * a1x * dt2;
    V.block<3, 3>(3, 6) = 0.5 * r1 * dt;
    V.block<3, 3>(3, 9) = V.block<3, 3>(3, 3);
    V.block<3, 3>(6, 3) = 0.5 * I3 * dt;
    V.block<3, 3>(6, 9) = 0.5 * I3 * dt;
    V.block<3, 3>(9, 12) = I3;
    V.block<3, 3>(12, 15) = I3;

    Eigen::Matrix<double, 18, 18> Q = Eigen::Matrix<double, 18, 18>::Zero();
    const double wa = noise.sigma_a * noise.sigma_a / dt;
    const double ww = noise.sigma_w * noise.sigma_w / dt;
    Q.block<3, 3>(0, 0) = wa * I3;
    Q.block<3, 3>(3, 3) = ww * I3;
    Q.block<3, 3>(6, 6) = wa * I3;
    Q.block<3, 3>(9, 9) = ww * I3;
    Q.block<3, 3>(12, 12) = noise.sigma_ba * noise.sigma_ba * dt * I3;
    Q.block<3, 3>(15, 15) = noise.sigma_bw * noise.sigma_bw * dt * I3;

    pre.covariance = F * pre.covariance * F.transpose() + V * Q * V.transpose();
    jac = F * jac;

    pre.alpha += pre.beta * dt + 0.5 * a_mid * dt2;
    pre.beta += a_mid * dt;
    pre.gamma = gamma1;
    pre.dt_total += dt;
  }

  pre.jacobian_wrt_bias = jac.block<15, 6>(0, 9);
  return pre;
}

PreintegratedImu correct_for_bias(const PreintegratedImu& pre, const ImuBias& new_bias,
                                  double relinearization_threshold) {
  const Vec3 dba = new_bias.accel - pre.bias_lin.accel;
  const Vec3 dbg = new_bias.gyro - pre.bias_lin.gyro;
  if (dba.norm() > relinearization_threshold || dbg.norm() > relinearization_threshold) {
    throw RepropagationRequired();
  }
  PreintegratedImu out = pre;
  out.alpha += pre.dalpha_dba() * dba + pre.dalpha_dbg() * dbg;
  out.beta += pre.dbeta_dba() * dba + pre.dbeta_dbg() * dbg;
  out.gamma = (pre.gamma * quat_exp(pre.dgamma_dbg() * dbg)).normalized();
  out.bias_lin = new_bias;
  return out;
}

Eigen::Matrix<double, 15, 1> imu_residual(const ImuState& state_k, const ImuState& state_k1,
                                          const PreintegratedImu& pre, const Vec3& gravity,
                                          Eigen::Matrix<double, 15, 15>* jac_k,
                                          Eigen::Matrix<double, 15, 15>* jac_k1) {
  const double dt = pre.dt_total;
  const Vec3 dba = state_k.bias.accel - pre.bias_lin.accel;
  const Vec3 dbg = state_k.bias.gyro - pre.bias_lin.gyro;

  // First-order bias correction at the state-k bias. The rotation part goes
  // through the exact exponential so the analytic derivative below (with its
  // right-Jacobian factor) matches finite differences at nonzero deltas.
  const Vec3 alpha_hat = pre.alpha + pre.dalpha_dba() * dba + pre.dalpha_dbg() * dbg;
  const Vec3 beta_hat = pre.beta + pre.dbeta_dba() * dba + pre.dbeta_dbg() * dbg;
  const Vec3 dtheta_bias = pre.dgamma_dbg() * dbg;
  const Quat gamma_hat = (pre.gamma * quat_exp(dtheta_bias)).normalized();

  // `gravity` is the physical (downward) vector; the classic residual form
  // is written for the upward-positive convention, hence the negations.
  const Mat3 rk_t = state_k.q.toRotationMatrix().transpose();
  const Vec3 u = state_k1.p - state_k.p - 0.5 * gravity * dt * dt - state_k.v * dt;
  const Vec3 w = state_k1.v - gravity * dt - state_k.v;

  Quat q_err = state_k.q.conjugate() * state_k1.q * gamma_hat.conjugate();
  const double err_sign = q_err.w() < 0.0 ? -1.0 : 1.0;
  if (err_sign < 0.0) q_err.coeffs() = -q_err.coeffs();

  Eigen::Matrix<double, 15, 1> r;
  r.segment<3>(0) = rk_t * u - alpha_hat;
  r.segment<3>(3) = rk_t * w - beta_hat;
  r.segment<3>(6) = 2.0 * q_err.vec();
  r.segment<3>(9) = state_k1.bias.accel - state_k.bias.accel;
  r.segment<3>(12) = state_k1.bias.gyro - state_k.bias.gyro;

  // State perturbation order: [dp, dtheta, dv, dba, dbg], right-multiplied
  // quaternion perturbations q <- q * exp(dtheta).
  if (jac_k) {
    auto& J = *jac_k;
    J.setZero();
    J.block<3, 3>(0, 0) = -rk_t;
    J.block<3, 3>(0, 3) = skew(rk_t * u);
    J.block<3, 3>(0, 6) = -rk_t * dt;
    J.block<3, 3>(0, 9) = -pre.dalpha_dba();
    J.block<3, 3>(0, 12) = -pre.dalpha_dbg();
    J.block<3, 3>(3, 3) = skew(rk_t * w);
    J.block<3, 3>(3, 6) = -rk_t;
    J.block<3, 3>(3, 9) = -pre.dbeta_dba();
    J.block<3, 3>(3, 12) = -pre.dbeta_dbg();
    J.block<3, 3>(6, 3) = -(q_err.w() * Mat3::Identity() - skew(q_err.vec()));
    const Eigen::Matrix4d m =
        quat_left(state_k.q.conjugate() * state_k1.q) * quat_right(gamma_hat.conjugate());
    J.block<3, 3>(6, 12) =
        -err_sign * m.block<3, 3>(1, 1) * so3_right_jacobian(dtheta_bias) * pre.dgamma_dbg();
    J.block<3, 3>(9, 9) = -Mat3::Identity();
    J.block<3, 3>(12, 12) = -Mat3::Identity();
  }
  if (jac_k1) {
    auto& J = *jac_k1;
    J.setZero();
    J.block<3, 3>(0, 0) = rk_t;
    J.block<3, 3>(3, 6) = rk_t;
    const Eigen::Matrix4d m =
        quat_left(state_k.q.conjugate() * state_k1.q) * quat_right(gamma_hat.conjugate());
    J.block<3, 3>(6, 3) = err_sign * m.block<3, 3>(1, 1);
    J.block<3, 3>(9, 9) = Mat3::Identity();
    J.block<3, 3>(12, 12) = Mat3::Identity();
  }
  return r;
}

ImuState propagate_state(const ImuState& start, const std::vector<ImuSample>& samples,
                         const Vec3& gravity) {
  ImuState s = start;
  for (size_t i = 0; i + 1 < samples.size(); ++i) {
    const ImuSample& s0 = samples[i];
    const ImuSample& s1 = samples[i + 1];
    const double dt = s1.timestamp - s0.timestamp;
    if (dt <= 0.0) throw NonMonotoneTimestamps("at sample " + std::to_string(i + 1));
    const Vec3 w_mid = 0.5 * (s0.gyro + s1.gyro) - s.bias.gyro;
    const Quat q1 =
        (s.q * Quat(1.0, 0.5 * w_mid.x() * dt, 0.5 * w_mid.y() * dt, 0.5 * w_mid.z() * dt))
            .normalized();
    const Vec3 a_world = 0.5 * (s.q * (s0.accel - s.bias.accel) + q1 * (s1.accel - s.bias.accel)) +
                         gravity;
    s.p += s.v * dt + 0.5 * a_world * dt * dt;
    s.v += a_world * dt;
    s.q = q1;
  }
  return s;
}

std::vector<ImuSample> load_imu_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<ImuSample> samples;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    std::stringstream ss(line);
    long long ts_ns;
    ImuSample s;
    if (!(ss >> ts_ns >> s.gyro.x() >> s.gyro.y() >> s.gyro.z() >> s.accel.x() >> s.accel.y() >>
          s.accel.z())) {
      continue;  // header line
    }
    s.timestamp = static_cast<double>(ts_ns) * 1e-9;
    samples.push_back(s);
  }
  return samples;
}

void save_imu_csv(const std::string& path, const std::vector<ImuSample>& samples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
         "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n";
  char buf[256];
  for (const auto& s : samples) {
    std::snprintf(buf, sizeof(buf), "%lld,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f\n",
                  static_cast<long long>(std::llround(s.timestamp * 1e9)), s.gyro.x(), s.gyro.y(),
                  s.gyro.z(), s.accel.x(), s.accel.y(), s.accel.z());
    out << buf;
  }
}

}  // namespace palo
