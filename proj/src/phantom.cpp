#include "resectsim/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include <json.hpp>

#include "resectsim/planner.hpp"

namespace resectsim {

namespace {

constexpr double kTracheaWall = 2.0;
constexpr int kWaveCount = 4;

}  // namespace

// ---------------------------------------------------------------------------
// Specs

double TracheaSpec::half_width() const {
  if (shape == SurfaceShape::flat) return radius;
  return radius * std::sin(arc_half_angle_deg * std::numbers::pi / 180.0);
}

void TracheaSpec::validate() const {
  if (!(radius > 0.0)) fail(ErrorKind::config, "trachea radius must be positive");
  if (!(length > 0.0)) fail(ErrorKind::config, "trachea length must be positive");
  if (!(noise_amp >= 0.0)) fail(ErrorKind::config, "trachea noise amplitude must be >= 0");
  if (!(arc_half_angle_deg > 0.0 && arc_half_angle_deg < 90.0))
    fail(ErrorKind::config, "trachea arc half angle must lie in (0, 90) degrees");
}

void TumorSpec::validate() const {
  if (!(diameter > 0.0)) fail(ErrorKind::config, "tumor diameter must be positive");
  if (!(height >= 0.0)) fail(ErrorKind::config, "tumor height must be >= 0");
  if (!(exp_n > 0.0 && exp_e > 0.0)) fail(ErrorKind::config, "tumor exponents must be positive");
  if (!(lobe_amp >= 0.0 && lobe_amp < 0.5)) fail(ErrorKind::config, "tumor lobe amplitude must lie in [0, 0.5)");
}

PhantomSpec phantom_for_seed(std::uint64_t seed) {
  std::mt19937_64 rng(0x5eed0000ULL + seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  PhantomSpec spec;
  spec.trachea.seed = seed;
  spec.tumor.seed = seed;
  spec.tumor.diameter = 20.0 * (1.0 + 0.20 * unit(rng));
  spec.tumor.height = 12.0 * (1.0 + 0.25 * unit(rng));
  spec.tumor.station = 37.5 + 4.0 * unit(rng);
  spec.tumor.lobe_amp = 0.06;
  return spec;
}

// ---------------------------------------------------------------------------
// Trachea surface

TracheaSurface::TracheaSurface(const TracheaSpec& spec) : spec_(spec) {
  spec.validate();
  half_width_ = spec.half_width();

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> weights;
  for (int w = 0; w < kWaveCount; ++w) {
    const double lambda = 20.0 + 30.0 * uni(rng);
    const double theta = std::numbers::pi * uni(rng);
    const double phase = 2.0 * std::numbers::pi * uni(rng);
    weights.push_back(0.5 + 0.5 * uni(rng));
    const double k = 2.0 * std::numbers::pi / lambda;
    waves_.push_back({0.0, k * std::cos(theta), k * std::sin(theta), phase});
  }
  double total = 0.0;
  for (double w : weights) total += w;
  for (std::size_t w = 0; w < waves_.size(); ++w) waves_[w].amp = spec.noise_amp * weights[w] / total;

  min_z_ = -spec.noise_amp;
  max_z_ = base(half_width_) + spec.noise_amp;
}

double TracheaSurface::base(double x) const {
  if (spec_.shape == SurfaceShape::flat) return 0.0;
  const double r = spec_.radius;
  return r - std::sqrt(std::max(0.0, r * r - x * x));
}

double TracheaSurface::height(double x, double y) const {
  double z = base(x);
  for (const auto& w : waves_) z += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
  return z;
}

bool TracheaSurface::in_footprint(double x, double y) const {
  return std::abs(x) <= half_width_ && y >= 0.0 && y <= spec_.length;
}

// ---------------------------------------------------------------------------
// Voxel grid

VoxelGrid::VoxelGrid(const Point3& origin, double resolution, std::array<int, 3> dims)
    : origin_(origin), resolution_(resolution), dims_(dims) {
  require(resolution > 0.0, "voxel resolution must be positive");
  require(dims[0] >= 0 && dims[1] >= 0 && dims[2] >= 0, "voxel dims must be non-negative");
  const auto n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  occupancy_.assign(n, 0);
  char_.assign(n, 0);
}

VoxelIndex VoxelGrid::unlinear(std::size_t idx) const {
  const auto nx = static_cast<std::size_t>(dims_[0]);
  const auto ny = static_cast<std::size_t>(dims_[1]);
  return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny), static_cast<int>(idx / (nx * ny))};
}

std::size_t VoxelGrid::occupied_count() const {
  return static_cast<std::size_t>(std::count(occupancy_.begin(), occupancy_.end(), std::uint8_t{1}));
}

std::size_t VoxelGrid::charred_count() const {
  return static_cast<std::size_t>(std::count(char_.begin(), char_.end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------------------
// Generation

namespace {

struct TumorShape {
  const TumorSpec& spec;
  double lobe_phase;

  double radius_at(double angle) const {
    return 0.5 * spec.diameter * (1.0 + spec.lobe_amp * std::cos(3.0 * angle + lobe_phase));
  }
  // Thickness above the trachea at (x, y); 0 outside the footprint.
  double thickness(double x, double y) const {
    const double dx = x;
    const double dy = y - spec.station;
    const double r = std::hypot(dx, dy);
    const double a = radius_at(std::atan2(dy, dx));
    const double rho = r / a;
    if (rho >= 1.0) return 0.0;
    return spec.height * std::pow(1.0 - std::pow(rho, spec.exp_n), 1.0 / spec.exp_e);
  }
};

double lobe_phase_for(const TumorSpec& spec) {
  std::mt19937_64 rng(spec.seed ^ 0x70a0ULL);
  return std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
}

}  // namespace

SceneState generate_phantom(const TracheaSpec& trachea, const TumorSpec& tumor, double resolution) {
  if (!(resolution >= 0.1 && resolution <= 1.0)) fail(ErrorKind::config, "voxel resolution must lie in [0.1, 1.0] mm");
  trachea.validate();
  tumor.validate();

  SceneState scene;
  scene.trachea = TracheaSurface(trachea);
  scene.tumor_spec = tumor;

  const double a_max = 0.5 * tumor.diameter * (1.0 + tumor.lobe_amp);
  if (a_max > scene.trachea.half_width() || tumor.station - a_max < 0.0 ||
      tumor.station + a_max > trachea.length) {
    fail(ErrorKind::config, "tumor footprint extends outside the trachea");
  }

  const TumorShape shape{tumor, lobe_phase_for(tumor)};
  const double pad = 2.0 * resolution;
  const double x0 = -a_max - pad;
  const double y0 = tumor.station - a_max - pad;
  const int nx = static_cast<int>(std::ceil(2.0 * (a_max + pad) / resolution));
  const int ny = nx;

  // Column surface heights bound the z extent of the grid.
  std::vector<double> column_s(static_cast<std::size_t>(nx) * ny);
  double s_lo = std::numeric_limits<double>::infinity();
  double s_hi = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const double x = x0 + (i + 0.5) * resolution;
      const double y = y0 + (j + 0.5) * resolution;
      const double s = scene.trachea.height(x, y);
      column_s[static_cast<std::size_t>(j) * nx + i] = s;
      s_lo = std::min(s_lo, s);
      s_hi = std::max(s_hi, s);
    }
  }
  const double z0 = s_lo - pad;
  const int nz = std::max(1, static_cast<int>(std::ceil((s_hi + tumor.height + 2.0 * pad - z0) / resolution)));
  scene.tumor = VoxelGrid(Point3(x0, y0, z0), resolution, {nx, ny, nz});

  double best_height = -1.0;
  std::size_t anchor = 0;
  double min_y = std::numeric_limits<double>::infinity();
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const double x = x0 + (i + 0.5) * resolution;
      const double y = y0 + (j + 0.5) * resolution;
      const double t = shape.thickness(x, y);
      if (t <= 0.0) continue;
      const double s = column_s[static_cast<std::size_t>(j) * nx + i];
      for (int k = 0; k < nz; ++k) {
        const double z = z0 + (k + 0.5) * resolution;
        if (z <= s || z > s + t) continue;
        const auto idx = scene.tumor.linear(i, j, k);
        scene.tumor.set_occupied(idx, true);
        min_y = std::min(min_y, y);
        if (z - s > best_height) {
          best_height = z - s;
          anchor = idx;
        }
      }
    }
  }
  scene.anchor = anchor;
  scene.initial_volume = tumor_volume(scene);
  scene.peel_station = std::isfinite(min_y) ? min_y - 0.5 * resolution : y0;
  return scene;
}

SceneState generate_phantom(const PhantomSpec& spec) {
  return generate_phantom(spec.trachea, spec.tumor, spec.resolution);
}

double tumor_volume(const SceneState& scene) {
  return static_cast<double>(scene.tumor.occupied_count()) * scene.tumor.voxel_volume();
}

std::optional<Aabb> tumor_bounds(const SceneState& scene) {
  const auto& g = scene.tumor;
  std::optional<Aabb> box;
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    if (!g.occupied(idx)) continue;
    const Point3 c = g.center(idx);
    if (!box) {
      box = Aabb{c, c};
    } else {
      box->min = box->min.cwiseMin(c);
      box->max = box->max.cwiseMax(c);
    }
  }
  return box;
}

std::size_t LabelImage::count(Label label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

// ---------------------------------------------------------------------------
// Rendering

std::optional<double> intersect_trachea(const TracheaSurface& surface, const Point3& origin,
                                        const Point3& dir) {
  // Clip the ray to the footprint prism and the z band of the surface.
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  auto clip = [&](double o, double d, double lo, double hi) {
    if (std::abs(d) < 1e-15) return o >= lo && o <= hi;
    double a = (lo - o) / d;
    double b = (hi - o) / d;
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    return t0 <= t1;
  };
  const double hw = surface.half_width();
  if (!clip(origin.x(), dir.x(), -hw, hw)) return std::nullopt;
  if (!clip(origin.y(), dir.y(), 0.0, surface.spec().length)) return std::nullopt;
  if (!clip(origin.z(), dir.z(), surface.min_height() - 1e-6, surface.max_height() + 1e-6)) return std::nullopt;

  auto f = [&](double t) {
    const Point3 p = origin + t * dir;
    return p.z() - surface.height(p.x(), p.y());
  };
  double prev_t = t0;
  double prev_f = f(t0);
  if (prev_f <= 0.0) return t0;
  const double step = 0.25 / std::max(1e-12, dir.norm());
  while (prev_t < t1) {
    const double t = std::min(t1, prev_t + step);
    const double ft = f(t);
    if (ft <= 0.0) {
      double lo = prev_t, hi = t;
      for (int it = 0; it < 64 && hi - lo > 1e-13; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) lo = mid; else hi = mid;
      }
      return hi;
    }
    prev_t = t;
    prev_f = ft;
  }
  return std::nullopt;
}

namespace {

struct VoxelHit {
  double t;
  bool charred;
};

// Amanatides-Woo traversal; voxels whose center lies in the peeled region are
// transparent.
std::optional<VoxelHit> intersect_tumor(const SceneState& scene, const Point3& origin, const Point3& dir) {
  const auto& g = scene.tumor;
  const auto dims = g.dims();
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) return std::nullopt;
  const double res = g.resolution();
  const Point3 lo = g.origin();
  const Point3 hi = lo + Point3(dims[0], dims[1], dims[2]) * res;

  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < lo[a] || origin[a] > hi[a]) return std::nullopt;
      continue;
    }
    double ta = (lo[a] - origin[a]) / dir[a];
    double tb = (hi[a] - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1) return std::nullopt;

  const Point3 entry = origin + t0 * dir;
  int cell[3];
  int step[3];
  double t_max[3];
  double t_delta[3];
  for (int a = 0; a < 3; ++a) {
    cell[a] = std::clamp(static_cast<int>(std::floor((entry[a] - lo[a]) / res)), 0, dims[a] - 1);
    if (dir[a] > 0.0) {
      step[a] = 1;
      t_max[a] = (lo[a] + (cell[a] + 1) * res - origin[a]) / dir[a];
      t_delta[a] = res / dir[a];
    } else if (dir[a] < 0.0) {
      step[a] = -1;
      t_max[a] = (lo[a] + cell[a] * res - origin[a]) / dir[a];
      t_delta[a] = -res / dir[a];
    } else {
      step[a] = 0;
      t_max[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    }
  }

  double t_enter = t0;
  while (true) {
    const auto idx = g.linear(cell[0], cell[1], cell[2]);
    if (g.occupied(idx)) {
      const double cy = lo.y() + (cell[1] + 0.5) * res;
      if (cy >= scene.peel_station) return VoxelHit{t_enter, g.charred(idx)};
    }
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    t_enter = t_max[axis];
    if (t_enter > t1) return std::nullopt;
    cell[axis] += step[axis];
    if (cell[axis] < 0 || cell[axis] >= dims[axis]) return std::nullopt;
    t_max[axis] += t_delta[axis];
  }
}

}  // namespace

Snapshot render_snapshot(const SceneState& scene, const RigidTransform& pose,
                         const CameraIntrinsics& intrinsics, int width, int height,
                         const RenderOptions& options) {
  intrinsics.validate();
  require(width > 0 && height > 0, "snapshot size must be positive");
  require(options.depth_step >= 0.0 && options.noise_sigma >= 0.0, "render options must be non-negative");

  Snapshot snap;
  snap.depth = DepthImage(width, height);
  snap.labels = LabelImage(width, height);
  snap.intrinsics = intrinsics;
  snap.pose = pose;

  std::mt19937_64 rng(options.noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Point3 origin = pose.translation();
  std::size_t hits = 0;
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      // Camera-frame direction with unit z, so the ray parameter is the depth.
      const Point3 dc((u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy, 1.0);
      const Point3 dir = pose.apply_direction(dc);
      const auto t_trachea = intersect_trachea(scene.trachea, origin, dir);
      const auto tumor_hit = intersect_tumor(scene, origin, dir);
      double t = 0.0;
      Label label = Label::background;
      if (tumor_hit && (!t_trachea || tumor_hit->t <= *t_trachea)) {
        t = tumor_hit->t;
        label = tumor_hit->charred ? Label::charred : Label::tumor;
      } else if (t_trachea) {
        t = *t_trachea;
        label = Label::trachea;
      }
      if (label == Label::background || !(t > 0.0)) continue;
      ++hits;
      if (options.noise_sigma > 0.0) t += options.noise_sigma * noise(rng);
      if (options.depth_step > 0.0) t = std::round(t / options.depth_step) * options.depth_step;
      if (!(t > 0.0)) continue;
      snap.depth.at(u, v) = t;
      snap.labels.at(u, v) = label;
    }
  }
  if (hits == 0) fail(ErrorKind::empty_snapshot, "no geometry visible from camera");
  return snap;
}

RigidTransform default_camera_pose(const SceneState& scene, double standoff) {
  Eigen::Matrix3d r;
  // camera x -> world +X, camera y -> world -Y, camera z -> world -Z
  r << 1, 0, 0,
       0, -1, 0,
       0, 0, -1;
  return RigidTransform(r, Point3(0.0, 0.5 * scene.trachea.spec().length, standoff));
}

CameraIntrinsics default_intrinsics(int width, int height) {
  const double f = 3.0 * std::max(width, height);
  return {f, f, 0.5 * width, 0.5 * height};
}

// ---------------------------------------------------------------------------
// Retraction and cutting

SceneState retract_tumor(SceneState scene, double delta) {
  require(delta > 0.0, "retraction delta must be positive");
  scene.peel_station += delta;
  return scene;
}

bool within_scene_bounds(const SceneState& scene, const Point3& p) {
  if (!p.allFinite()) return false;
  if (!scene.trachea.in_footprint(p.x(), p.y())) return false;
  const auto& g = scene.tumor;
  const double top = g.origin().z() + g.dims()[2] * g.resolution();
  return p.z() >= scene.trachea.min_height() - 50.0 && p.z() <= std::max(top, scene.trachea.max_height()) + 200.0;
}

namespace {

double point_segment_distance2(const Point3& p, const Point3& a, const Point3& d) {
  const double dd = d.squaredNorm();
  double t = 0.0;
  if (dd > 0.0) t = std::clamp((p - a).dot(d) / dd, 0.0, 1.0);
  return (p - a - t * d).squaredNorm();
}

// Squared distance from p to {a + s*e + t*d : s in [-1/2, 1/2], t in [0, 1]}.
double point_swept_edge_distance2(const Point3& p, const Point3& a, const Point3& e, const Point3& d) {
  const double ee = e.squaredNorm();
  const double dd = d.squaredNorm();
  if (ee == 0.0) return point_segment_distance2(p, a, d);
  if (dd == 0.0) return point_segment_distance2(p, a - 0.5 * e, e);

  const Point3 w = p - a;
  const double ed = e.dot(d);
  const double det = ee * dd - ed * ed;
  if (det > 1e-12 * ee * dd) {
    const double we = w.dot(e);
    const double wd = w.dot(d);
    const double s = (we * dd - wd * ed) / det;
    const double t = (wd * ee - we * ed) / det;
    if (s >= -0.5 && s <= 0.5 && t >= 0.0 && t <= 1.0) return (w - s * e - t * d).squaredNorm();
  }
  double best = point_segment_distance2(p, a - 0.5 * e, d);
  best = std::min(best, point_segment_distance2(p, a + 0.5 * e, d));
  best = std::min(best, point_segment_distance2(p, a - 0.5 * e, e));
  best = std::min(best, point_segment_distance2(p, a + d - 0.5 * e, e));
  return best;
}

// Volume of trachea wall swept by one tool segment, sampled on the tumor grid lattice.
double swept_wall_volume(const SceneState& scene, const Point3& a, const Point3& e, const Point3& d, double radius) {
  const auto& g = scene.tumor;
  const double res = g.resolution();
  const Point3 lo = a.cwiseMin(a + d) - 0.5 * e.cwiseAbs() - Point3::Constant(radius);
  const Point3 hi = a.cwiseMax(a + d) + 0.5 * e.cwiseAbs() + Point3::Constant(radius);
  const Point3 o = g.origin();
  const int i0 = static_cast<int>(std::floor((lo.x() - o.x()) / res));
  const int i1 = static_cast<int>(std::ceil((hi.x() - o.x()) / res));
  const int j0 = static_cast<int>(std::floor((lo.y() - o.y()) / res));
  const int j1 = static_cast<int>(std::ceil((hi.y() - o.y()) / res));
  const int k0 = static_cast<int>(std::floor((lo.z() - o.z()) / res));
  const int k1 = static_cast<int>(std::ceil((hi.z() - o.z()) / res));
  const double r2 = radius * radius;
  std::size_t count = 0;
  for (int j = j0; j <= j1; ++j) {
    for (int i = i0; i <= i1; ++i) {
      const double x = o.x() + (i + 0.5) * res;
      const double y = o.y() + (j + 0.5) * res;
      if (!scene.trachea.in_footprint(x, y)) continue;
      const double s = scene.trachea.height(x, y);
      for (int k = k0; k <= k1; ++k) {
        const double z = o.z() + (k + 0.5) * res;
        if (z >= s || z <= s - kTracheaWall) continue;
        if (point_swept_edge_distance2(Point3(x, y, z), a, e, d) <= r2) ++count;
      }
    }
  }
  return static_cast<double>(count) * g.voxel_volume();
}

}  // namespace

CutOutcome apply_cut(SceneState& scene, std::span<const Waypoint> path, double kerf, double blade_width) {
  require(!path.empty(), "cut path must not be empty");
  require(kerf > 0.0, "kerf must be positive");
  require(blade_width >= 0.0, "blade width must be non-negative");
  for (const auto& wp : path) {
    require(within_scene_bounds(scene, wp.position), "waypoint outside scene bounds");
  }

  CutOutcome outcome;
  for (const auto& wp : path) {
    if (wp.position.z() < scene.trachea.height(wp.position.x(), wp.position.y())) outcome.perforated = true;
  }

  auto& g = scene.tumor;
  const double res = g.resolution();
  const auto dims = g.dims();
  const Point3 o = g.origin();
  const double radius = 0.5 * kerf;
  const double r2 = radius * radius;
  const Point3 edge(0.0, blade_width, 0.0);

  std::vector<std::uint8_t> deleted(g.size(), 0);
  std::vector<std::size_t> deleted_list;
  const std::size_t segments = path.size() == 1 ? 1 : path.size() - 1;
  for (std::size_t s = 0; s < segments; ++s) {
    const Point3 a = path[s].position;
    const Point3 d = path.size() == 1 ? Point3::Zero().eval() : (path[s + 1].position - a).eval();
    const Point3 lo = a.cwiseMin(a + d) - 0.5 * edge - Point3::Constant(radius);
    const Point3 hi = a.cwiseMax(a + d) + 0.5 * edge + Point3::Constant(radius);
    const int i0 = std::max(0, static_cast<int>(std::floor((lo.x() - o.x()) / res)));
    const int i1 = std::min(dims[0] - 1, static_cast<int>(std::ceil((hi.x() - o.x()) / res)));
    const int j0 = std::max(0, static_cast<int>(std::floor((lo.y() - o.y()) / res)));
    const int j1 = std::min(dims[1] - 1, static_cast<int>(std::ceil((hi.y() - o.y()) / res)));
    const int k0 = std::max(0, static_cast<int>(std::floor((lo.z() - o.z()) / res)));
    const int k1 = std::min(dims[2] - 1, static_cast<int>(std::ceil((hi.z() - o.z()) / res)));
    for (int k = k0; k <= k1; ++k) {
      for (int j = j0; j <= j1; ++j) {
        for (int i = i0; i <= i1; ++i) {
          const auto idx = g.linear(i, j, k);
          if (!g.occupied(idx) || deleted[idx]) continue;
          if (point_swept_edge_distance2(g.center(i, j, k), a, edge, d) <= r2) {
            deleted[idx] = 1;
            deleted_list.push_back(idx);
          }
        }
      }
    }
    if (outcome.perforated) {
      const bool below = a.z() < scene.trachea.height(a.x(), a.y()) ||
                         (a + d).z() < scene.trachea.height((a + d).x(), (a + d).y());
      if (below) scene.trachea_removed_volume += swept_wall_volume(scene, a, edge, d, radius);
    }
  }

  for (std::size_t idx : deleted_list) {
    g.set_occupied(idx, false);
    g.set_charred(idx, false);
  }
  // Surviving 6-neighbors of the deletion set form the charred boundary.
  for (std::size_t idx : deleted_list) {
    const auto v = g.unlinear(idx);
    static constexpr int nbr[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (const auto& n : nbr) {
      const int i = v.i + n[0], j = v.j + n[1], k = v.k + n[2];
      if (!g.contains(i, j, k)) continue;
      const auto nidx = g.linear(i, j, k);
      if (g.occupied(nidx) && !g.charred(nidx)) {
        g.set_charred(nidx, true);
        ++outcome.char_voxels_added;
      }
    }
  }
  outcome.removed_volume = static_cast<double>(deleted_list.size()) * g.voxel_volume();

  // Detachment: trace the body containing the apex and check whether it still
  // reaches the layer resting on the trachea.
  if (!scene.detached && g.occupied_count() > 0) {
    std::vector<double> column_s(static_cast<std::size_t>(dims[0]) * dims[1]);
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i)
        column_s[static_cast<std::size_t>(j) * dims[0] + i] =
            scene.trachea.height(o.x() + (i + 0.5) * res, o.y() + (j + 0.5) * res);
    auto height_above = [&](std::size_t idx) {
      const auto v = g.unlinear(idx);
      return o.z() + (v.k + 0.5) * res - column_s[static_cast<std::size_t>(v.j) * dims[0] + v.i];
    };

    std::size_t anchor = scene.anchor;
    if (!g.occupied(anchor)) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t idx = 0; idx < g.size(); ++idx) {
        if (!g.occupied(idx)) continue;
        const double h = height_above(idx);
        if (h > best) {
          best = h;
          anchor = idx;
        }
      }
      scene.anchor = anchor;
    }

    std::vector<std::uint8_t> seen(g.size(), 0);
    std::vector<std::size_t> component;
    std::deque<std::size_t> queue{anchor};
    seen[anchor] = 1;
    bool grounded = false;
    while (!queue.empty()) {
      const auto idx = queue.front();
      queue.pop_front();
      component.push_back(idx);
      if (height_above(idx) <= res) grounded = true;
      const auto v = g.unlinear(idx);
      static constexpr int nbr[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
      for (const auto& n : nbr) {
        const int i = v.i + n[0], j = v.j + n[1], k = v.k + n[2];
        if (!g.contains(i, j, k)) continue;
        const auto nidx = g.linear(i, j, k);
        if (seen[nidx] || !g.occupied(nidx)) continue;
        seen[nidx] = 1;
        queue.push_back(nidx);
      }
    }
    if (!grounded) {
      for (std::size_t idx : component) {
        g.set_occupied(idx, false);
        g.set_charred(idx, false);
      }
      outcome.detached = true;
      outcome.detached_volume = static_cast<double>(component.size()) * g.voxel_volume();
      scene.detached = true;
    }
  }

  scene.removed_volume += outcome.removed_volume + outcome.detached_volume;
  return outcome;
}

// ---------------------------------------------------------------------------
// Snapshot export

namespace {

void write_pgm(const std::filesystem::path& path, int w, int h, int maxval, const std::vector<std::uint16_t>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << "P5\n" << w << ' ' << h << '\n' << maxval << '\n';
  for (auto v : data) {
    if (maxval > 255) {
      const char bytes[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xff)};
      out.write(bytes, 2);
    } else {
      const char b = static_cast<char>(v);
      out.write(&b, 1);
    }
  }
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

std::vector<std::uint16_t> read_pgm(const std::filesystem::path& path, int& w, int& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  std::string magic;
  int maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) fail(ErrorKind::io, "bad PGM header in " + path.string());
  in.get();
  std::vector<std::uint16_t> data(static_cast<std::size_t>(w) * h);
  for (auto& v : data) {
    if (maxval > 255) {
      unsigned char b[2];
      in.read(reinterpret_cast<char*>(b), 2);
      v = static_cast<std::uint16_t>((b[0] << 8) | b[1]);
    } else {
      unsigned char b;
      in.read(reinterpret_cast<char*>(&b), 1);
      v = b;
    }
  }
  if (!in) fail(ErrorKind::io, "truncated PGM " + path.string());
  return data;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const std::string& suffix) {
  return stem.parent_path() / (stem.filename().string() + suffix);
}

}  // namespace

void export_snapshot(const Snapshot& snap, const std::filesystem::path& stem) {
  const int w = snap.depth.width, h = snap.depth.height;
  std::vector<std::uint16_t> depth(snap.depth.depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const double units = std::round(snap.depth.depth[i] * 100.0);
    if (units > 65535.0) fail(ErrorKind::io, "depth exceeds 16-bit PGM range");
    depth[i] = static_cast<std::uint16_t>(units);
  }
  std::vector<std::uint16_t> labels(snap.labels.labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint16_t>(snap.labels.labels[i]);
  write_pgm(with_suffix(stem, "_depth.pgm"), w, h, 65535, depth);
  write_pgm(with_suffix(stem, "_labels.pgm"), w, h, 255, labels);

  const auto& r = snap.pose.rotation();
  const auto& t = snap.pose.translation();
  nlohmann::json meta = {
      {"width", w},
      {"height", h},
      {"depth_unit_mm", 0.01},
      {"intrinsics", {{"fx", snap.intrinsics.fx}, {"fy", snap.intrinsics.fy}, {"cx", snap.intrinsics.cx}, {"cy", snap.intrinsics.cy}}},
      {"pose",
       {{"rotation", {r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1), r(2, 2)}},
        {"translation", {t.x(), t.y(), t.z()}}}},
  };
  std::ofstream out(with_suffix(stem, ".json"));
  if (!out) fail(ErrorKind::io, "cannot write snapshot sidecar");
  out << meta.dump(2) << '\n';
}

Snapshot import_snapshot(const std::filesystem::path& stem) {
  std::ifstream in(with_suffix(stem, ".json"));
  if (!in) fail(ErrorKind::io, "cannot read snapshot sidecar");
  const auto meta = nlohmann::json::parse(in);
  int w = 0, h = 0, lw = 0, lh = 0;
  const auto depth = read_pgm(with_suffix(stem, "_depth.pgm"), w, h);
  const auto labels = read_pgm(with_suffix(stem, "_labels.pgm"), lw, lh);
  if (lw != w || lh != h) fail(ErrorKind::io, "depth and label images differ in size");

  Snapshot snap;
  snap.depth = DepthImage(w, h);
  snap.labels = LabelImage(w, h);
  for (std::size_t i = 0; i < depth.size(); ++i) snap.depth.depth[i] = depth[i] * 0.01;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 3) fail(ErrorKind::io, "label id out of range");
    snap.labels.labels[i] = static_cast<Label>(labels[i]);
  }
  const auto& k = meta.at("intrinsics");
  snap.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(), k.at("cy").get<double>()};
  const auto rot = meta.at("pose").at("rotation").get<std::vector<double>>();
  const auto tr = meta.at("pose").at("translation").get<std::vector<double>>();
  if (rot.size() != 9 || tr.size() != 3) fail(ErrorKind::io, "malformed pose in snapshot sidecar");
  Eigen::Matrix3d r;
  r << rot[0], rot[1], rot[2], rot[3], rot[4], rot[5], rot[6], rot[7], rot[8];
  snap.pose = RigidTransform(r, Point3(tr[0], tr[1], tr[2]));
  return snap;
}

}  // namespace resectsim
