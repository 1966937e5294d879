#include "palo/tracks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "palo/errors.hpp"

namespace palo {

std::vector<Track> load_tracks_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::map<int, Track> by_id;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    std::stringstream ss(line);
    int id, frame;
    double u, v;
    if (!(ss >> id >> frame >> u >> v)) continue;
    Track& t = by_id[id];
    t.id = id;
    if (t.observations.empty()) {
      double depth;
      if (ss >> depth) t.depth_init = depth;
    }
    t.observations.push_back({frame, u, v});
  }
  std::vector<Track> out;
  out.reserve(by_id.size());
  for (auto& [id, t] : by_id) {
    std::sort(t.observations.begin(), t.observations.end(),
              [](const TrackObservation& a, const TrackObservation& b) { return a.frame < b.frame; });
    out.push_back(std::move(t));
  }
  return out;
}

void save_tracks_csv(const std::string& path, const std::vector<Track>& tracks) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "# feature_id,frame,u,v[,depth_init on first row]\n";
  char buf[192];
  for (const auto& t : tracks) {
    for (size_t i = 0; i < t.observations.size(); ++i) {
      const auto& o = t.observations[i];
      if (i == 0 && std::isfinite(t.depth_init)) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.6f,%.6f,%.9f\n", t.id, o.frame, o.u, o.v,
                      t.depth_init);
      } else {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.6f,%.6f\n", t.id, o.frame, o.u, o.v);
      }
      out << buf;
    }
  }
}

std::vector<double> load_frames_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::map<int, double> by_frame;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    std::stringstream ss(line);
    int frame;
    long long ts_ns;
    if (!(ss >> frame >> ts_ns)) continue;
    by_frame[frame] = static_cast<double>(ts_ns) * 1e-9;
  }
  std::vector<double> out;
  for (const auto& [frame, t] : by_frame) {
    if (frame != static_cast<int>(out.size())) throw IoError(path + ": frame indices not dense");
    out.push_back(t);
  }
  return out;
}

void save_frames_csv(const std::string& path, const std::vector<double>& timestamps) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "# frame,timestamp_ns\n";
  char buf[96];
  for (size_t i = 0; i < timestamps.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%lld\n", i,
                  static_cast<long long>(std::llround(timestamps[i] * 1e9)));
    out << buf;
  }
}

}  // namespace palo
