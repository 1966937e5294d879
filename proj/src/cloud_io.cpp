#include "palo/cloud_io.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "palo/errors.hpp"
#include "palo/feature_cloud.hpp"

namespace palo {

namespace {

bool is_blank_or_comment(const std::string& line) {
  for (char c : line) {
    if (c == '#') return true;
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

// Splits on commas and/or whitespace.
std::vector<double> parse_numbers(const std::string& line) {
  std::vector<double> vals;
  std::string token;
  std::stringstream ss(line);
  std::string normalized = line;
  for (char& c : normalized) {
    if (c == ',') c = ' ';
  }
  std::stringstream ns(normalized);
  double v;
  while (ns >> v) vals.push_back(v);
  return vals;
}

}  // namespace

std::vector<Vec3> load_cloud(const std::string& path) {
  const auto dot = path.find_last_of('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == "ply") return load_cloud_ply(path);
  return load_cloud_csv(path);
}

std::vector<Vec3> load_cloud_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) {
    throw IoError(path + ": missing ply magic");
  }
  long vertex_count = -1;
  bool ascii = false;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "format") {
      std::string fmt;
      ss >> fmt;
      ascii = fmt == "ascii";
    } else if (word == "element") {
      std::string what;
      long n;
      ss >> what >> n;
      if (what == "vertex") vertex_count = n;
    } else if (word == "end_header") {
      break;
    }
  }
  if (!ascii) throw IoError(path + ": only ascii ply is supported");
  if (vertex_count < 0) throw IoError(path + ": no vertex element");
  std::vector<Vec3> pts;
  pts.reserve(vertex_count);
  for (long i = 0; i < vertex_count && std::getline(in, line); ++i) {
    const auto vals = parse_numbers(line);
    if (vals.size() < 3) throw IoError(path + ": short vertex line");
    pts.emplace_back(vals[0], vals[1], vals[2]);
  }
  if (static_cast<long>(pts.size()) != vertex_count) {
    throw IoError(path + ": truncated vertex list");
  }
  return pts;
}

std::vector<Vec3> load_cloud_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Vec3> pts;
  std::string line;
  while (std::getline(in, line)) {
    if (is_blank_or_comment(line)) continue;
    const auto vals = parse_numbers(line);
    if (vals.size() < 3) continue;  // tolerate header lines
    pts.emplace_back(vals[0], vals[1], vals[2]);
  }
  return pts;
}

void save_cloud_ply(const std::string& path, const std::vector<Vec3>& points) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f\n", p.x(), p.y(), p.z());
    out << buf;
  }
}

void save_cloud_csv(const std::string& path, const std::vector<Vec3>& points) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f\n", p.x(), p.y(), p.z());
    out << buf;
  }
}

}  // namespace palo
