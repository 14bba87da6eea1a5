#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "resectsim/geometry.hpp"

namespace resectsim {

struct Waypoint;  // planner.hpp

enum class SurfaceShape { half_pipe, flat };

struct TracheaSpec {
  double radius = 16.0;
  double length = 75.0;
  double noise_amp = 0.4;
  std::uint64_t seed = 1;
  // Extent of the half-pipe arc on either side of the trough bottom.
  double arc_half_angle_deg = 60.0;
  SurfaceShape shape = SurfaceShape::half_pipe;

  double half_width() const;
  void validate() const;

  friend bool operator==(const TracheaSpec&, const TracheaSpec&) = default;
};

struct TumorSpec {
  double station = 37.5;
  double diameter = 20.0;
  double height = 12.0;
  // thickness(rho) = height * (1 - rho^exp_n)^(1/exp_e); 2/2 is a half ellipsoid.
  double exp_n = 2.0;
  double exp_e = 2.0;
  std::uint64_t seed = 1;
  // Relative radial lobe perturbation of the footprint; 0 gives a circle.
  double lobe_amp = 0.0;

  void validate() const;

  friend bool operator==(const TumorSpec&, const TumorSpec&) = default;
};

struct PhantomSpec {
  TracheaSpec trachea;
  TumorSpec tumor;
  double resolution = 0.25;
};

inline constexpr double kDefaultKerf = 1.0;
inline constexpr double kDefaultResolution = 0.25;

// Phantom for experiment seed 1..N: diameter varies +-20 %, height +-25 %.
PhantomSpec phantom_for_seed(std::uint64_t seed);

// z = S(x, y): half-cylinder trough plus smooth low-amplitude undulation.
class TracheaSurface {
 public:
  TracheaSurface() = default;
  explicit TracheaSurface(const TracheaSpec& spec);

  double height(double x, double y) const;
  bool in_footprint(double x, double y) const;
  const TracheaSpec& spec() const noexcept { return spec_; }
  double half_width() const noexcept { return half_width_; }
  // Bounds of S over the footprint.
  double min_height() const noexcept { return min_z_; }
  double max_height() const noexcept { return max_z_; }

  friend bool operator==(const TracheaSurface&, const TracheaSurface&) = default;

 private:
  struct Wave {
    double amp, kx, ky, phase;
    friend bool operator==(const Wave&, const Wave&) = default;
  };
  TracheaSpec spec_{};
  double half_width_ = 0.0;
  double min_z_ = 0.0;
  double max_z_ = 0.0;
  std::vector<Wave> waves_;

  double base(double x) const;
};

struct VoxelIndex {
  int i = 0, j = 0, k = 0;
  friend bool operator==(const VoxelIndex&, const VoxelIndex&) = default;
};

class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(const Point3& origin, double resolution, std::array<int, 3> dims);

  const Point3& origin() const noexcept { return origin_; }
  double resolution() const noexcept { return resolution_; }
  const std::array<int, 3>& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return occupancy_.size(); }

  std::size_t linear(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims_[1] + j) * dims_[0] + i;
  }
  VoxelIndex unlinear(std::size_t idx) const;
  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims_[0] && j < dims_[1] && k < dims_[2];
  }
  Point3 center(int i, int j, int k) const {
    return origin_ + Point3(i + 0.5, j + 0.5, k + 0.5) * resolution_;
  }
  Point3 center(std::size_t idx) const {
    const auto v = unlinear(idx);
    return center(v.i, v.j, v.k);
  }

  bool occupied(std::size_t idx) const { return occupancy_[idx] != 0; }
  bool charred(std::size_t idx) const { return char_[idx] != 0; }
  void set_occupied(std::size_t idx, bool v) { occupancy_[idx] = v ? 1 : 0; }
  void set_charred(std::size_t idx, bool v) { char_[idx] = v ? 1 : 0; }

  std::size_t occupied_count() const;
  std::size_t charred_count() const;
  double voxel_volume() const noexcept { return resolution_ * resolution_ * resolution_; }

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

 private:
  Point3 origin_ = Point3::Zero();
  double resolution_ = kDefaultResolution;
  std::array<int, 3> dims_{0, 0, 0};
  std::vector<std::uint8_t> occupancy_;
  std::vector<std::uint8_t> char_;
};

struct SceneState {
  TracheaSurface trachea;
  TumorSpec tumor_spec;
  VoxelGrid tumor;
  // Tumor material at y below this station is peeled back and exposed.
  double peel_station = 0.0;
  bool detached = false;
  double removed_volume = 0.0;
  // Trachea wall volume swept by perforating cuts; part of removed_volume.
  double trachea_removed_volume = 0.0;
  double initial_volume = 0.0;
  // Apex voxel of the tumor; the body above the cut ribbon is traced from it.
  std::size_t anchor = 0;

  friend bool operator==(const SceneState&, const SceneState&) = default;
};

SceneState generate_phantom(const TracheaSpec& trachea, const TumorSpec& tumor,
                            double resolution = kDefaultResolution);
SceneState generate_phantom(const PhantomSpec& spec);

double tumor_volume(const SceneState& scene);

// Tight bounds of the remaining tumor voxels (centers), or nullopt if empty.
struct Aabb {
  Point3 min, max;
};
std::optional<Aabb> tumor_bounds(const SceneState& scene);

struct LabelImage {
  int width = 0;
  int height = 0;
  std::vector<Label> labels;

  LabelImage() = default;
  LabelImage(int w, int h)
      : width(w), height(h), labels(static_cast<std::size_t>(w) * h, Label::background) {}
  Label at(int u, int v) const { return labels[static_cast<std::size_t>(v) * width + u]; }
  Label& at(int u, int v) { return labels[static_cast<std::size_t>(v) * width + u]; }
  std::size_t count(Label label) const;
};

struct Snapshot {
  DepthImage depth;
  LabelImage labels;
  CameraIntrinsics intrinsics;
  RigidTransform pose;  // world-from-camera
};

struct RenderOptions {
  // Depth is rounded to this step; 0.01 mm matches the PGM export unit.
  double depth_step = 0.01;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

Snapshot render_snapshot(const SceneState& scene, const RigidTransform& pose,
                         const CameraIntrinsics& intrinsics, int width, int height,
                         const RenderOptions& options = {});

// Top-down camera centered over the trachea, optical axis along world -Z.
RigidTransform default_camera_pose(const SceneState& scene, double standoff = 250.0);
CameraIntrinsics default_intrinsics(int width, int height);

// First hit of a world ray with the trachea surface, nullopt when it misses.
std::optional<double> intersect_trachea(const TracheaSurface& surface, const Point3& origin,
                                        const Point3& dir);

SceneState retract_tumor(SceneState scene, double delta);

struct CutOutcome {
  double removed_volume = 0.0;
  bool perforated = false;
  std::size_t char_voxels_added = 0;
  bool detached = false;  // detachment happened during this cut
  double detached_volume = 0.0;
};

// Sweeps the tool edge along `path`, deleting tumor voxels within kerf/2.
// The edge is a segment of length `blade_width` parallel to Y centered on
// each waypoint; 0 reduces the tool to a point tip.
CutOutcome apply_cut(SceneState& scene, std::span<const Waypoint> path, double kerf = kDefaultKerf,
                     double blade_width = 0.0);

bool within_scene_bounds(const SceneState& scene, const Point3& p);

// Snapshot export: 16-bit depth PGM in 0.01 mm units, 8-bit label PGM,
// and a JSON sidecar with intrinsics and pose.
void export_snapshot(const Snapshot& snap, const std::filesystem::path& stem);
Snapshot import_snapshot(const std::filesystem::path& stem);

}  // namespace resectsim
