/**
 * @file tracks.hpp
 * @brief Feature track observations and their CSV exchange format.
 *
 * Track CSV contract (converter output / simulator output):
 *   feature_id,frame,u,v[,depth_init]
 * depth_init is the metric depth estimate at the first observation; rows
 * without it fall back to the configured default depth.
 * Frame timestamps ride in a companion CSV: `frame,timestamp_ns`.
 */
#pragma once

#include <limits>
#include <string>
#include <vector>

namespace palo {

struct TrackObservation {
  int frame{0};
  double u{0.0}, v{0.0};
};

struct Track {
  int id{0};
  std::vector<TrackObservation> observations;  ///< ascending frame order
  double depth_init{std::numeric_limits<double>::quiet_NaN()};

  int first_frame() const { return observations.empty() ? -1 : observations.front().frame; }
  const TrackObservation* find(int frame) const {
    for (const auto& o : observations) {
      if (o.frame == frame) return &o;
    }
    return nullptr;
  }
};

std::vector<Track> load_tracks_csv(const std::string& path);
void save_tracks_csv(const std::string& path, const std::vector<Track>& tracks);

/// Camera frame timestamps, seconds, indexed by frame number.
std::vector<double> load_frames_csv(const std::string& path);
void save_frames_csv(const std::string& path, const std::vector<double>& timestamps);

}  // namespace palo
