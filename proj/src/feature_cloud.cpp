#include "palo/feature_cloud.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "palo/errors.hpp"

namespace palo {

FeatureCloud load_feature_cloud_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  FeatureCloud cloud;
  std::string line;
  while (std::getline(in, line)) {
    bool blank = true;
    for (char c : line) {
      if (c == '#') break;
      if (!std::isspace(static_cast<unsigned char>(c))) {
        blank = false;
        break;
      }
    }
    if (blank) continue;
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    std::stringstream ss(line);
    FeaturePoint fp;
    if (!(ss >> fp.id >> fp.point.x() >> fp.point.y() >> fp.point.z())) continue;
    cloud.points.push_back(fp);
  }
  return cloud;
}

void save_feature_cloud_csv(const std::string& path, const FeatureCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "# feature_id,x,y,z\n";
  char buf[128];
  for (const auto& fp : cloud.points) {
    std::snprintf(buf, sizeof(buf), "%d,%.9f,%.9f,%.9f\n", fp.id, fp.point.x(), fp.point.y(),
                  fp.point.z());
    out << buf;
  }
}

}  // namespace palo
