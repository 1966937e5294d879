/**
 * @file errors.hpp
 * @brief Error types shared across the library.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace palo {

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct FrameMismatch : Error {
  explicit FrameMismatch(const std::string& what) : Error("frame mismatch: " + what) {}
};

struct DegenerateGeometry : Error {
  explicit DegenerateGeometry(const std::string& what) : Error("degenerate geometry: " + what) {}
};

struct EmptyMap : Error {
  EmptyMap() : Error("operation requires a non-empty map") {}
};

struct NonMonotoneTimestamps : Error {
  explicit NonMonotoneTimestamps(const std::string& what) : Error("non-monotone timestamps: " + what) {}
};

struct EmptyStream : Error {
  EmptyStream() : Error("imu stream has fewer than two samples") {}
};

struct RepropagationRequired : Error {
  RepropagationRequired() : Error("bias delta exceeds first-order correction range") {}
};

struct TooFewFeatures : Error {
  explicit TooFewFeatures(const std::string& what) : Error("too few features: " + what) {}
};

struct ZeroFeatures : Error {
  ZeroFeatures() : Error("no features to associate (tfn = 0)") {}
};

struct SolverDiverged : Error {
  SolverDiverged() : Error("solver cost increased through all damping escalations") {}
};

struct UnknownFrame : Error {
  explicit UnknownFrame(const std::string& what) : Error("unknown frame: " + what) {}
};

struct NoOverlap : Error {
  NoOverlap() : Error("trajectories share no timestamps within matching tolerance") {}
};

struct InvalidSpec : Error {
  explicit InvalidSpec(const std::string& what) : Error("invalid spec: " + what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("i/o error: " + what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

}  // namespace palo
