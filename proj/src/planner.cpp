#include "resectsim/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace resectsim {

const char* to_string(TravelDir dir) noexcept { return dir == TravelDir::pos_x ? "+x" : "-x"; }

void Waypoint::validate() const {
  require(position.allFinite(), "waypoint position must be finite");
  require(pitch_deg > 0.0 && pitch_deg < 90.0, "waypoint pitch must lie in (0, 90) degrees");
}

PitchTable demonstration_pitch_table() {
  return {
      {21.7, 20.4, 24.7, 29.1},
      {20.8, 29.4, 34.1, 36.5},
      {28.7, 27.9, 28.2, 29.2},
      {32.0, 27.0, 31.6, 31.4},
  };
}

double estimate_pitch(const PointCloud& demo_cloud) {
  const auto n = demo_cloud.size();
  if (n < 2) fail(ErrorKind::estimation, "pitch estimation needs at least two points");
  double mx = 0.0, mz = 0.0;
  for (const auto& p : demo_cloud.points) {
    mx += p.x();
    mz += p.z();
  }
  mx /= static_cast<double>(n);
  mz /= static_cast<double>(n);
  double sxx = 0.0, sxz = 0.0;
  for (const auto& p : demo_cloud.points) {
    sxx += (p.x() - mx) * (p.x() - mx);
    sxz += (p.x() - mx) * (p.z() - mz);
  }
  double spread = 0.0;
  for (const auto& p : demo_cloud.points) spread = std::max(spread, std::abs(p.x() - mx));
  if (!(sxx > 0.0) || spread <= 1e-12 * (1.0 + std::abs(mx))) {
    fail(ErrorKind::estimation, "degenerate tool points: x values are not distinct");
  }
  return std::atan(std::abs(sxz / sxx)) * 180.0 / std::numbers::pi;
}

PitchSummary summarize_pitch(const PitchTable& table) {
  std::vector<double> values;
  for (const auto& row : table) values.insert(values.end(), row.begin(), row.end());
  require(values.size() >= 2, "pitch summary needs at least two entries");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

PlanFrame frame_from_tumor(const PointCloud& tumor_cloud) {
  if (tumor_cloud.empty()) fail(ErrorKind::planning, "tumor cloud is empty");
  PlanFrame f;
  f.y_min = f.x_min = std::numeric_limits<double>::infinity();
  double y_max = -std::numeric_limits<double>::infinity();
  f.x_max = -std::numeric_limits<double>::infinity();
  for (const auto& p : tumor_cloud.points) {
    f.y_min = std::min(f.y_min, p.y());
    y_max = std::max(y_max, p.y());
    f.x_min = std::min(f.x_min, p.x());
    f.x_max = std::max(f.x_max, p.x());
  }
  f.length = y_max - f.y_min;
  return f;
}

double path_length(const std::vector<Waypoint>& path) {
  double len = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) len += (path[i].position - path[i - 1].position).norm();
  return len;
}

void assign_timestamps(std::vector<Waypoint>& path, double speed) {
  require(speed > 0.0, "speed must be positive");
  double dist = 0.0;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (i > 0) dist += (path[i].position - path[i - 1].position).norm();
    path[i].t_s = dist / speed;
  }
}

CutPlan plan_cuts(const PolySurface& surface, const PointCloud& tumor_cloud, const PlanConfig& config) {
  require(config.cut_count >= 1, "cut count must be >= 1");
  require(config.waypoint_spacing > 0.0, "waypoint spacing must be positive");
  require(config.clearance >= 0.0, "clearance must be non-negative");
  require(config.lateral_margin >= 0.0, "lateral margin must be non-negative");
  if (!config.per_cut_pitch_deg.empty()) {
    require(config.per_cut_pitch_deg.size() == static_cast<std::size_t>(config.cut_count),
            "per-cut pitch list must match the cut count");
  }
  if (tumor_cloud.empty() && !config.frame) fail(ErrorKind::planning, "tumor cloud is empty");
  surface.validate();

  const PlanFrame frame = config.frame ? *config.frame : frame_from_tumor(tumor_cloud);
  const double min_extent = 2.0 * config.waypoint_spacing;
  if (frame.length < min_extent || frame.x_max - frame.x_min < min_extent) {
    fail(ErrorKind::planning, "tumor extent is smaller than twice the waypoint spacing");
  }

  CutPlan plan;
  plan.clearance = config.clearance;
  plan.pitch_deg = config.pitch_deg;
  plan.speed = config.speed;
  plan.power_w = config.power_w;
  plan.frame = frame;

  double x_start = frame.x_min - config.lateral_margin;
  double x_end = frame.x_max + config.lateral_margin;
  if (config.x_limit) {
    x_start = std::max(x_start, -*config.x_limit);
    x_end = std::min(x_end, *config.x_limit);
  }
  if (x_end - x_start < min_extent) fail(ErrorKind::planning, "sweep width is smaller than twice the waypoint spacing");
  const int intervals = static_cast<int>(std::ceil((x_end - x_start) / config.waypoint_spacing - 1e-9));

  const double step = frame.length / config.cut_count;
  double top = -std::numeric_limits<double>::infinity();
  for (const auto& p : tumor_cloud.points) top = std::max(top, p.z());

  for (int k = 0; k < config.cut_count; ++k) {
    const double y = frame.y_min + (k + 0.5) * step;
    plan.stations.push_back(y);
    const double pitch = config.per_cut_pitch_deg.empty() ? config.pitch_deg : config.per_cut_pitch_deg[k];

    std::vector<Waypoint> sweep;
    for (int s = 0; s <= intervals; ++s) {
      const double x = s == intervals ? x_end : x_start + (x_end - x_start) * s / intervals;
      Waypoint wp;
      wp.position = Point3(x, y, evaluate(surface, x, y) + config.clearance);
      wp.pitch_deg = pitch;
      wp.dir = TravelDir::pos_x;
      wp.validate();
      sweep.push_back(wp);
    }
    std::vector<Waypoint> path = sweep;
    for (auto it = sweep.rbegin(); it != sweep.rend(); ++it) {
      Waypoint back = *it;
      back.dir = TravelDir::neg_x;
      path.push_back(back);
    }
    assign_timestamps(path, config.speed);
    plan.paths.push_back(std::move(path));
  }

  double path_top = -std::numeric_limits<double>::infinity();
  for (const auto& path : plan.paths)
    for (const auto& wp : path) path_top = std::max(path_top, wp.position.z());
  plan.home = Point3(x_start, frame.y_min + 0.5 * frame.length, std::max(top, path_top) + config.home_lift);
  return plan;
}

namespace {

std::vector<Waypoint> forward_sweep(const std::vector<Waypoint>& path) {
  std::vector<Waypoint> out;
  for (const auto& wp : path) {
    if (wp.dir != TravelDir::pos_x) break;
    out.push_back(wp);
  }
  return out;
}

double interp_z(const std::vector<Waypoint>& sweep, double x) {
  auto it = std::lower_bound(sweep.begin(), sweep.end(), x,
                             [](const Waypoint& w, double v) { return w.position.x() < v; });
  if (it == sweep.begin()) return it->position.z();
  if (it == sweep.end()) return sweep.back().position.z();
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double span = b.position.x() - a.position.x();
  if (span <= 0.0) return b.position.z();
  const double t = (x - a.position.x()) / span;
  return a.position.z() + t * (b.position.z() - a.position.z());
}

}  // namespace

double plan_consistency_rmse(const CutPlan& predicted, const CutPlan& current, std::size_t index, double sample_step) {
  require(sample_step > 0.0, "sample step must be positive");
  if (index >= predicted.paths.size() || index >= current.paths.size()) {
    fail(ErrorKind::comparison, "plans do not share station index " + std::to_string(index));
  }
  const auto a = forward_sweep(predicted.paths[index]);
  const auto b = forward_sweep(current.paths[index]);
  if (a.empty() || b.empty()) fail(ErrorKind::comparison, "plan path has no forward sweep");
  const double lo = std::max(a.front().position.x(), b.front().position.x());
  const double hi = std::min(a.back().position.x(), b.back().position.x());
  if (!(hi >= lo)) fail(ErrorKind::comparison, "plan paths do not overlap in x");

  const int n = std::max(1, static_cast<int>(std::ceil((hi - lo) / sample_step)));
  double sum = 0.0;
  for (int s = 0; s <= n; ++s) {
    const double x = s == n ? hi : lo + (hi - lo) * s / n;
    const double dz = interp_z(b, x) - interp_z(a, x);
    sum += dz * dz;
  }
  return std::sqrt(sum / (n + 1));
}

double surface_consistency_rmse(const PolySurface& a, const PolySurface& b, const PlanFrame& frame, int samples) {
  require(samples >= 2, "need at least two samples per axis");
  double sum = 0.0;
  for (int i = 0; i < samples; ++i) {
    const double x = frame.x_min + (frame.x_max - frame.x_min) * i / (samples - 1);
    for (int j = 0; j < samples; ++j) {
      const double y = frame.y_min + frame.length * j / (samples - 1);
      const double dz = evaluate(a, x, y) - evaluate(b, x, y);
      sum += dz * dz;
    }
  }
  return std::sqrt(sum / (static_cast<double>(samples) * samples));
}

}  // namespace resectsim
