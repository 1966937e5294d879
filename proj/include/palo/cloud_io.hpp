/**
 * @file cloud_io.hpp
 * @brief Point-cloud file I/O: ASCII PLY (float x,y,z vertices) and plain
 *        `x,y,z` CSV, whitespace tolerant, '#' comments skipped.
 */
#pragma once

#include <string>
#include <vector>

#include "palo/geometry.hpp"

namespace palo {

/// Loads .ply (ASCII) or .csv/.xyz/.txt by extension.
std::vector<Vec3> load_cloud(const std::string& path);

std::vector<Vec3> load_cloud_ply(const std::string& path);
std::vector<Vec3> load_cloud_csv(const std::string& path);

void save_cloud_ply(const std::string& path, const std::vector<Vec3>& points);
void save_cloud_csv(const std::string& path, const std::vector<Vec3>& points);

}  // namespace palo
