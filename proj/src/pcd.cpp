#include "resectsim/pcd.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace resectsim::pcd {

namespace {

std::string format_g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  for (std::string tok; ss >> tok;) out.push_back(tok);
  return out;
}

[[noreturn]] void bad(const std::string& what) { fail(ErrorKind::io, "pcd: " + what); }

}  // namespace

void write(std::ostream& out, const PointCloud& cloud) {
  cloud.validate();
  const bool labeled = cloud.labels.has_value();
  const auto n = cloud.size();
  out << "# .PCD v0.7 - Point Cloud Data file format\n";
  out << "VERSION 0.7\n";
  out << (labeled ? "FIELDS x y z label\n" : "FIELDS x y z\n");
  out << (labeled ? "SIZE 4 4 4 4\n" : "SIZE 4 4 4\n");
  out << (labeled ? "TYPE F F F U\n" : "TYPE F F F\n");
  out << (labeled ? "COUNT 1 1 1 1\n" : "COUNT 1 1 1\n");
  out << "WIDTH " << n << "\nHEIGHT 1\n";
  out << "VIEWPOINT 0 0 0 1 0 0 0\n";
  out << "POINTS " << n << "\nDATA ascii\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = cloud.points[i];
    out << format_g6(p.x()) << ' ' << format_g6(p.y()) << ' ' << format_g6(p.z());
    if (labeled) out << ' ' << static_cast<unsigned>((*cloud.labels)[i]);
    out << '\n';
  }
}

void write_file(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) bad("cannot open " + path.string() + " for writing");
  write(out, cloud);
  if (!out) bad("write failed for " + path.string());
}

PointCloud read(std::istream& in) {
  std::vector<std::string> fields;
  std::size_t points = 0;
  bool have_points = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    const std::string& key = tok[0];
    if (key == "VERSION" || key == "SIZE" || key == "TYPE" || key == "COUNT" || key == "WIDTH" ||
        key == "HEIGHT" || key == "VIEWPOINT") {
      continue;
    } else if (key == "FIELDS") {
      fields.assign(tok.begin() + 1, tok.end());
    } else if (key == "POINTS") {
      if (tok.size() != 2) bad("malformed POINTS line");
      points = std::stoull(tok[1]);
      have_points = true;
    } else if (key == "DATA") {
      if (tok.size() != 2 || tok[1] != "ascii") bad("only DATA ascii is supported");
      break;
    } else {
      bad("unknown header key '" + key + "'");
    }
  }
  const bool labeled = fields == std::vector<std::string>{"x", "y", "z", "label"};
  if (!labeled && fields != std::vector<std::string>{"x", "y", "z"}) bad("FIELDS must be 'x y z' or 'x y z label'");
  if (!have_points) bad("missing POINTS");

  PointCloud cloud;
  cloud.points.reserve(points);
  std::vector<Label> labels;
  for (std::size_t i = 0; i < points; ++i) {
    if (!std::getline(in, line)) bad("truncated DATA section");
    auto tok = split_ws(line);
    if (tok.size() != fields.size()) bad("wrong field count on data line " + std::to_string(i));
    try {
      cloud.points.emplace_back(std::stod(tok[0]), std::stod(tok[1]), std::stod(tok[2]));
      if (labeled) {
        const auto id = std::stoul(tok[3]);
        if (id > 3) bad("label id out of range");
        labels.push_back(static_cast<Label>(id));
      }
    } catch (const std::logic_error&) {
      bad("unparseable number on data line " + std::to_string(i));
    }
  }
  if (labeled) cloud.labels = std::move(labels);
  cloud.validate();
  return cloud;
}

PointCloud read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) bad("cannot open " + path.string());
  return read(in);
}

}  // namespace resectsim::pcd
