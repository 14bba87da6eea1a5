#pragma once

#include <filesystem>
#include <iosfwd>

#include "resectsim/geometry.hpp"

namespace resectsim::pcd {

// ASCII PCD 0.7 subset. FIELDS are `x y z` or `x y z label`; coordinates
// are written with 6 significant digits.
void write(std::ostream& out, const PointCloud& cloud);
void write_file(const std::filesystem::path& path, const PointCloud& cloud);

PointCloud read(std::istream& in);
PointCloud read_file(const std::filesystem::path& path);

}  // namespace resectsim::pcd
