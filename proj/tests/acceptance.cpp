// Acceptance suite: one PASS/FAIL line per criterion (INFO lines are not
// scored); exit status 1 if any criterion fails.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <thread>

#include "resectsim/executor.hpp"
#include "resectsim/pcd.hpp"
#include "resectsim/serialization.hpp"

using namespace resectsim;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kRemovalMin = 90.0;
constexpr double kRemovalMax = 110.0;
constexpr double kTotalWallLimitS = 300.0;
constexpr double kProjectionTol = 1e-6;
constexpr double kNestedTol = 1e-9;
constexpr double kSweepNoise = 0.2;
constexpr std::size_t kSweepMaxPoints = 5000;
constexpr int kSweepMaxDegree = 10;
constexpr double kPitchMean = 28.3;
constexpr double kPitchStd = 4.6;
constexpr double kPitchTol = 0.05;
constexpr double kClearanceTol = 1e-9;
constexpr std::size_t kClearanceWaypoints = 1000;
constexpr double kCleanGateThreshold = 1.0;
constexpr double kBboxShiftMm = 10.0;
constexpr double kPostcutRmseMax = 1.0;
constexpr int kSeeds = 5;

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct SeedRun {
  RunRecord record;
  double wall_s = 0.0;
};

void end_to_end(std::vector<SeedRun>& runs) {
  double total = 0.0;
  bool all_ok = true;
  std::string detail;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    RunConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(seed);
    const auto t0 = std::chrono::steady_clock::now();
    SeedRun r{run_headless(phantom_for_seed(cfg.seed), cfg)};
    r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    total += r.wall_s;
    const auto& m = r.record.metrics;
    const bool ok = r.record.status == RunStatus::detached && !m.perforated && m.removal_pct >= kRemovalMin &&
                    m.removal_pct <= kRemovalMax;
    all_ok = all_ok && ok;
    detail += fmt("seed %d %s %.2f%%%s; ", seed, to_string(r.record.status), m.removal_pct, m.perforated ? " PERFORATED" : "");
    runs.push_back(std::move(r));
  }
  report(all_ok, "end_to_end_detachment", detail + fmt("removal within [%.0f, %.0f]", kRemovalMin, kRemovalMax));
  report(total < kTotalWallLimitS, "end_to_end_wall_time", fmt("%.1f s for %d runs (limit %.0f s)", total, kSeeds, kTotalWallLimitS));
}

void projection_round_trip() {
  constexpr int w = 256, h = 256;
  const auto scene = generate_phantom(phantom_for_seed(1));
  const auto pose = default_camera_pose(scene);
  const auto k = default_intrinsics(w, h);
  RenderOptions ro;
  const auto snap = render_snapshot(scene, pose, k, w, h, ro);
  BinaryMask mask(w, h);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u)
      if (snap.labels.at(u, v) == Label::trachea) mask.set(u, v);
  const auto cloud = project_depth_to_cloud(snap.depth, mask, k);

  // Analytic reference: the pixel ray's first hit on the trachea surface.
  const double tol = ro.depth_step + kProjectionTol;
  double worst_depth = 0.0, worst_excess = 0.0;
  std::size_t i = 0, checked = 0;
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      if (!mask.at(u, v) || !(snap.depth.at(u, v) > 0.0)) continue;
      const Point3& p = cloud.points[i++];
      const Point3 ray_cam((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      const Point3 dir = pose.apply_direction(ray_cam.normalized());
      const auto t = intersect_trachea(scene.trachea, pose.translation(), dir);
      if (!t) continue;
      const Point3 analytic = ray_cam.normalized() * *t;
      const double dz = std::abs(p.z() - analytic.z());
      worst_depth = std::max(worst_depth, dz);
      worst_excess = std::max(worst_excess, (p - analytic).norm() - tol * ray_cam.norm());
      ++checked;
    }
  report(checked > 10000 && worst_depth <= tol && worst_excess <= 0.0, "projection_round_trip",
         fmt("%zu trachea pixels on a %dx%d render, max depth error %.2e mm (tol %.2e mm)", checked, w, h, worst_depth, tol));
}

PointCloud noisy_trachea_cloud(std::uint64_t seed) {
  const auto scene = generate_phantom(phantom_for_seed(seed));
  RenderOptions ro;
  ro.noise_sigma = kSweepNoise;
  ro.noise_seed = seed;
  const auto pose = default_camera_pose(scene);
  const auto snap = render_snapshot(scene, pose, default_intrinsics(256, 256), 256, 256, ro);
  std::vector<BoundingBox2D> boxes;
  for (Label cls : {Label::trachea, Label::tumor}) boxes.push_back(*ground_truth_box(snap.labels, cls));
  const auto world = transform_cloud(segment(snap, boxes).trachea, snap.pose);
  PointCloud out;
  const std::size_t stride = (world.size() + kSweepMaxPoints - 1) / kSweepMaxPoints;
  for (std::size_t i = 0; i < world.size(); i += stride) out.points.push_back(world.points[i]);
  return out;
}

void surface_sweep() {
  bool nested_ok = true, pareto_ok = true, default_ok = true;
  double worst_violation = 0.0;
  std::string chosen;
  std::size_t max_points = 0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto cloud = noisy_trachea_cloud(seed);
    max_points = std::max(max_points, cloud.size());
    const auto reports = sweep_models(cloud, kSweepMaxDegree, 1);
    auto at = [&](int dx, int dy) -> const FitReport& {
      return reports[static_cast<std::size_t>((dx - 1) * kSweepMaxDegree + dy - 1)];
    };
    for (int dx = 1; dx <= kSweepMaxDegree; ++dx)
      for (int dy = 1; dy <= kSweepMaxDegree; ++dy) {
        const auto& r = at(dx, dy);
        if (!r.ok()) continue;
        if (dx < kSweepMaxDegree && at(dx + 1, dy).ok())
          worst_violation = std::max(worst_violation, at(dx + 1, dy).rmse - r.rmse);
        if (dy < kSweepMaxDegree && at(dx, dy + 1).ok())
          worst_violation = std::max(worst_violation, at(dx, dy + 1).rmse - r.rmse);
      }
    nested_ok = nested_ok && worst_violation <= kNestedTol;

    std::vector<std::string> brute;
    for (const auto& r : reports) {
      if (!r.ok()) continue;
      bool dominated = false;
      for (const auto& s : reports)
        if (s.ok() && s.rmse <= r.rmse && s.fit_time_s <= r.fit_time_s && (s.rmse < r.rmse || s.fit_time_s < r.fit_time_s))
          dominated = true;
      if (!dominated) brute.push_back(r.model_id);
    }
    std::vector<std::string> front;
    for (const auto& r : pareto_front(reports)) front.push_back(r.model_id);
    pareto_ok = pareto_ok && front == brute;

    const auto surface = fit_default_surface(cloud);
    default_ok = default_ok && surface.coefficient_count() == 21;
    chosen = surface.model_id();
  }
  report(nested_ok, "surface_nested_monotonicity",
         fmt("max rmse increase %.2e over 4 seeds, <= %zu points (tol %.0e)", worst_violation, max_points, kNestedTol));
  report(pareto_ok, "surface_pareto_front", "front equals brute-force non-dominated set on 4 seeds");
  report(default_ok, "surface_default_model", chosen + " with 21 coefficients");
}

void pitch_summary() {
  const auto s = summarize_pitch(demonstration_pitch_table());
  report(std::abs(s.mean - kPitchMean) <= kPitchTol && std::abs(s.sample_std - kPitchStd) <= kPitchTol, "pitch_summary",
         fmt("mean %.3f deg (%.1f), sample std %.3f deg (%.1f), tol %.2f", s.mean, kPitchMean, s.sample_std, kPitchStd, kPitchTol));
}

void clearance_and_retrace() {
  std::size_t count = 0;
  double worst = 0.0;
  bool symmetric = true;
  for (std::uint64_t seed = 1; count < kClearanceWaypoints; ++seed) {
    const auto spec = phantom_for_seed(seed);
    const auto scene = generate_phantom(spec);
    const auto snap = render_snapshot(scene, default_camera_pose(scene), default_intrinsics(256, 256), 256, 256);
    std::vector<BoundingBox2D> boxes;
    for (Label cls : {Label::trachea, Label::tumor}) boxes.push_back(*ground_truth_box(snap.labels, cls));
    const auto seg = segment(snap, boxes);
    const auto surface = fit_default_surface(transform_cloud(seg.trachea, snap.pose));
    PlanConfig cfg;
    cfg.x_limit = scene.trachea.half_width() - 0.5;
    const auto plan = plan_cuts(surface, transform_cloud(seg.tumor, snap.pose), cfg);
    for (const auto& path : plan.paths) {
      const std::size_t n = path.size();
      for (std::size_t i = 0; i < n; ++i) {
        const auto& p = path[i].position;
        worst = std::max(worst, std::abs(p.z() - evaluate(surface, p.x(), p.y()) - cfg.clearance));
        if (path[i].position != path[n - 1 - i].position) symmetric = false;
        ++count;
      }
    }
  }
  report(worst <= kClearanceTol, "waypoint_clearance", fmt("%zu waypoints, max |z - P - c| %.2e (tol %.0e)", count, worst, kClearanceTol));
  report(symmetric, "retrace_symmetry", "every return pass retraces its forward sweep");
}

void gate_behaviour(const std::vector<SeedRun>& clean_default) {
  bool clean_ok = true;
  double clean_max = 0.0;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    RunConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.gate_threshold = kCleanGateThreshold;
    const auto r = run_headless(phantom_for_seed(cfg.seed), cfg);
    for (const auto& c : r.cycles)
      for (const auto& g : c.gates) {
        clean_ok = clean_ok && g.verdict == GateVerdict::auto_approved;
        clean_max = std::max(clean_max, g.rmse);
      }
  }
  report(clean_ok, "gate_clean_auto_approve", fmt("max clean gate RMSE %.4f mm at threshold %.1f mm", clean_max, kCleanGateThreshold));

  bool default_ok = true;
  double default_max = 0.0;
  for (const auto& r : clean_default)
    for (const auto& c : r.record.cycles)
      for (const auto& g : c.gates) {
        default_ok = default_ok && g.verdict == GateVerdict::auto_approved;
        default_max = std::max(default_max, g.rmse);
      }
  report(default_ok, "gate_clean_auto_approve_default",
         fmt("max clean gate RMSE %.4f mm at threshold %.2f mm", default_max, kDefaultGateThreshold));

  for (double threshold : {kDefaultGateThreshold, kCleanGateThreshold}) {
    int raised = 0;
    double min_rmse = std::numeric_limits<double>::infinity();
    std::string detail;
    for (int seed = 1; seed <= kSeeds; ++seed) {
      RunConfig cfg;
      cfg.seed = static_cast<std::uint64_t>(seed);
      cfg.gate_threshold = threshold;
      cfg.faults.push_back({2, FaultKind::bbox_shift, kBboxShiftMm});
      RunRecorder rec;
      bool asked = false;
      CallbackSupervisor sup([&](const SupervisionRequest& req) {
        if (req.kind == RequestKind::cut_approval && req.cycle == 2) asked = true;
        return Decision{DecisionVerdict::reject, {}, DecidedBy::human};
      });
      const auto phantom = phantom_for_seed(cfg.seed);
      const auto r = run_procedure(generate_phantom(phantom), phantom, cfg, sup, rec);
      if (r.cycles.size() > 2 && !r.cycles[2].gates.empty()) min_rmse = std::min(min_rmse, r.cycles[2].gates.front().rmse);
      raised += asked ? 1 : 0;
      detail += fmt("seed %d %s; ", seed, asked ? "raised" : "missed");
    }
    const auto line = detail + fmt("%d/%d raised, min corrupted RMSE %.3f mm", raised, kSeeds, min_rmse);
    if (threshold == kDefaultGateThreshold) {
      report(raised == kSeeds, fmt("gate_bbox_shift_detected_at_%.2fmm", threshold), line);
    } else {
      // Not a criterion: shows why the default threshold is calibrated below 1.0 mm.
      std::printf("INFO gate_bbox_shift_at_%.2fmm: %s\n", threshold, line.c_str());
    }
  }
}

void postcut(const std::vector<SeedRun>& runs) {
  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& m = runs[i].record.metrics;
    ok = ok && m.postcut_rmse_mm && *m.postcut_rmse_mm <= kPostcutRmseMax;
    detail += m.postcut_rmse_mm ? fmt("seed %zu %.3f mm; ", i + 1, *m.postcut_rmse_mm) : fmt("seed %zu undefined; ", i + 1);
  }
  report(ok, "postcut_rmse", detail + fmt("limit %.1f mm", kPostcutRmseMax));

  bool lumen_ok = true;
  std::string lumen;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    lumen_ok = lumen_ok && runs[i].record.metrics.success;
    lumen += fmt("%.1f%% ", runs[i].record.metrics.lumen_pct);
  }
  report(lumen_ok, "lumen_reopening_success", lumen + "(> 50%)");
}

void crash_safety() {
  const auto root = fs::temp_directory_path() / ("resectsim-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const auto reference_dir = root / "reference";
  const auto killed_dir = root / "killed";
  RunConfig cfg;
  cfg.seed = 3;
  cfg.auto_approve = true;
  const auto phantom = phantom_for_seed(cfg.seed);

  {
    RunRecorder rec(reference_dir);
    AutoApproveSupervisor sup;
    run_procedure(generate_phantom(phantom), phantom, cfg, sup, rec);
  }
  const auto reference = load_run(reference_dir);

  const pid_t pid = ::fork();
  if (pid == 0) {
    RunRecorder rec(killed_dir);
    AutoApproveSupervisor sup;
    run_procedure(generate_phantom(phantom), phantom, cfg, sup, rec);
    ::_exit(0);
  }
  const auto log = killed_dir / "events.jsonl";
  const std::uintmax_t half = fs::file_size(reference_dir / "events.jsonl") / 2;
  for (int i = 0; i < 20000; ++i) {
    std::error_code ec;
    if (fs::exists(log, ec) && fs::file_size(log, ec) >= half) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  ::kill(pid, SIGKILL);
  int status = 0;
  ::waitpid(pid, &status, 0);
  const bool killed = WIFSIGNALED(status);

  bool prefix_ok = false;
  std::string detail;
  try {
    const auto run = load_run(killed_dir);
    prefix_ok = killed && !run.completed && run.status == "aborted" && !run.events.empty() &&
                run.events.size() < reference.events.size();
    for (std::size_t i = 0; prefix_ok && i < run.events.size(); ++i) {
      const auto& a = run.events[i];
      const auto& b = reference.events[i];
      prefix_ok = a.seq == b.seq && a.kind == b.kind && a.t_sim_s == b.t_sim_s;
    }
    detail = fmt("killed after %zu of %zu events, status %s, torn tail %s", run.events.size(), reference.events.size(),
                 run.status.c_str(), run.dropped_torn_line ? "dropped" : "none");
  } catch (const std::exception& e) {
    detail = std::string("load failed: ") + e.what();
  }
  report(prefix_ok, "crash_safety_intact_prefix", detail);

  const auto recorded = cycle_records(reference.events);
  const auto replayed = replay_run(reference_dir);
  bool same = recorded.size() == replayed.cycles.size() && replayed.status == run_status_from_string(reference.status);
  for (std::size_t i = 0; same && i < recorded.size(); ++i) same = same_record(recorded[i], replayed.cycles[i]);
  report(same, "replay_equality", fmt("%zu cycle records, status %s", recorded.size(), reference.status.c_str()));
  fs::remove_all(root);
}

}  // namespace

int main() {
  try {
    std::vector<SeedRun> runs;
    end_to_end(runs);
    projection_round_trip();
    surface_sweep();
    pitch_summary();
    clearance_and_retrace();
    gate_behaviour(runs);
    postcut(runs);
    crash_safety();
  } catch (const std::exception& e) {
    report(false, "acceptance_suite", std::string("unexpected error: ") + e.what());
  }
  std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
