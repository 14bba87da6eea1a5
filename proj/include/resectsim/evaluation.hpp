#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <vector>

#include "resectsim/phantom.hpp"
#include "resectsim/run_store.hpp"
#include "resectsim/surface.hpp"

namespace resectsim {

double removal_percent(double initial_volume, double removed_volume);

// RMS over charred voxel centers of z - (P(x, y) + clearance).
double postcut_rmse(const SceneState& scene, const PolySurface& goal, double clearance);

// 100 * min over Y slices of (nominal - tallest obstruction above the
// trachea surface) / nominal, clamped to [0, 100].
double lumen_reopening(const SceneState& scene, double nominal_diameter);

inline bool lumen_success(double lumen_pct) { return lumen_pct > 50.0; }

struct ClassIou {
  double mean = 0.0;
  double std = 0.0;  // sample std; 0 with std_defined = false when n < 2
  std::size_t n = 0;
  bool std_defined = false;
};

ClassIou summarize_iou(const std::vector<double>& values);

struct IouStats {
  ClassIou trachea;
  ClassIou tumor;
};

// Per-class IoU against ground truth from every detection event.
IouStats iou_stats(const std::vector<Event>& events);

struct ProcedureMetrics {
  double removal_pct = 0.0;
  std::optional<double> postcut_rmse_mm;
  double lumen_pct = 0.0;
  bool perforated = false;
  bool success = false;
  IouStats iou;
};

Json metrics_to_json(const ProcedureMetrics& m);
ProcedureMetrics metrics_from_json(const Json& j);
void print_metrics_table(std::ostream& out, const ProcedureMetrics& m);

}  // namespace resectsim
