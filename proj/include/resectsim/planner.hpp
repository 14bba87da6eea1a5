#pragma once

#include <optional>
#include <vector>

#include "resectsim/geometry.hpp"
#include "resectsim/surface.hpp"

namespace resectsim {

enum class TravelDir { pos_x, neg_x };

const char* to_string(TravelDir dir) noexcept;

struct Waypoint {
  Point3 position = Point3::Zero();  // world frame
  double pitch_deg = 28.3;
  TravelDir dir = TravelDir::pos_x;
  double t_s = 0.0;  // time from the start of the path at constant speed

  void validate() const;
};

// Schedule frame fixed at the first cycle: the tumor extent along Y and X.
struct PlanFrame {
  double y_min = 0.0;
  double length = 0.0;  // L
  double x_min = 0.0;
  double x_max = 0.0;
};

struct PlanConfig {
  int cut_count = 6;
  double clearance = 1.0;
  double pitch_deg = 28.3;
  std::vector<double> per_cut_pitch_deg;  // overrides pitch_deg when non-empty
  double speed = 2.0;
  double lateral_margin = 1.0;
  double waypoint_spacing = 0.5;
  double power_w = 24.0;  // carried for the log only
  double home_lift = 10.0;
  // Clamp |x| of sweeps to this half-width when set.
  std::optional<double> x_limit;
  std::optional<PlanFrame> frame;
};

struct CutPlan {
  // One sweep per station: forward pass along +X then the reversed retrace.
  std::vector<std::vector<Waypoint>> paths;
  double clearance = 1.0;
  double pitch_deg = 28.3;
  double speed = 2.0;
  double power_w = 24.0;
  PlanFrame frame;
  std::vector<double> stations;
  Point3 home = Point3::Zero();

  double station_spacing() const { return stations.empty() ? 0.0 : frame.length / static_cast<double>(stations.size()); }
};

using PitchTable = std::vector<std::vector<double>>;

// Pitch angles measured from the four handheld demonstrations (rows) over
// their first four cuts (columns).
PitchTable demonstration_pitch_table();

// atan(|slope|) of the least-squares line z = a x + b, in degrees.
double estimate_pitch(const PointCloud& demo_cloud);

struct PitchSummary {
  double mean = 0.0;
  double sample_std = 0.0;
};

PitchSummary summarize_pitch(const PitchTable& table);

PlanFrame frame_from_tumor(const PointCloud& tumor_cloud);

CutPlan plan_cuts(const PolySurface& surface, const PointCloud& tumor_cloud, const PlanConfig& config = {});

// Cumulative arc-length time stamps at constant speed, starting from 0.
void assign_timestamps(std::vector<Waypoint>& path, double speed);
double path_length(const std::vector<Waypoint>& path);

// RMS of z differences between path `index` of both plans, on common x
// stations of the forward sweep.
double plan_consistency_rmse(const CutPlan& predicted, const CutPlan& current, std::size_t index,
                             double sample_step = 0.5);

// Whole-surface variant: RMS of z differences on a grid over the frame.
double surface_consistency_rmse(const PolySurface& a, const PolySurface& b, const PlanFrame& frame, int samples = 41);

}  // namespace resectsim
