/**
 * @file frames.hpp
 * @brief Tagged coordinate frames for the LiDAR/camera/IMU frame zoo.
 */
#pragma once

#include <cstdint>
#include <string>

namespace palo {

/// Coordinate frame identifier. World frames carry no time index; sensor
/// frames carry the integer index of the keyframe/scan they belong to.
struct FrameId {
  enum class Kind : uint8_t {
    LidarWorld,   ///< L, fixed world frame of the LiDAR map
    LidarScan,    ///< L_k, scan frame at time index k
    CameraWorld,  ///< C0, gravity-aligned camera/VIO world frame
    Camera,       ///< C_k, camera frame at time index k
    Imu,          ///< I_k, IMU body frame at time index k
  };

  Kind kind{Kind::LidarWorld};
  int64_t index{-1};  ///< time index; -1 for world frames

  static FrameId lidar_world() { return {Kind::LidarWorld, -1}; }
  static FrameId lidar_scan(int64_t k) { return {Kind::LidarScan, k}; }
  static FrameId camera_world() { return {Kind::CameraWorld, -1}; }
  static FrameId camera(int64_t k) { return {Kind::Camera, k}; }
  static FrameId imu(int64_t k) { return {Kind::Imu, k}; }

  bool operator==(const FrameId& o) const { return kind == o.kind && index == o.index; }
  bool operator!=(const FrameId& o) const { return !(*this == o); }

  std::string str() const {
    const char* names[] = {"L", "L_k", "C0", "C_k", "I_k"};
    std::string s = names[static_cast<int>(kind)];
    if (index >= 0) s += "[" + std::to_string(index) + "]";
    return s;
  }
};

}  // namespace palo
