#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "resectsim/error.hpp"
#include "resectsim/phantom.hpp"
#include "resectsim/planner.hpp"
#include "resectsim/serialization.hpp"

using namespace resectsim;

namespace {

PolySurface fit_trachea(const TracheaSurface& s) {
  PointCloud c;
  const double hw = s.half_width();
  for (double x = -hw; x <= hw; x += 0.75)
    for (double y = 0.0; y <= s.spec().length; y += 1.5) c.points.emplace_back(x, y, s.height(x, y));
  return fit_default_surface(c);
}

PointCloud tumor_box_cloud(double x0, double x1, double y0, double y1, double z) {
  PointCloud c;
  for (double x = x0; x <= x1 + 1e-9; x += 0.5)
    for (double y = y0; y <= y1 + 1e-9; y += 0.5) c.points.emplace_back(x, y, z);
  return c;
}

PolySurface plane(double z0) {
  PointCloud c;
  for (double x = -10; x <= 10; x += 1)
    for (double y = 0; y <= 60; y += 2) c.points.emplace_back(x, y, z0);
  return fit_poly(c, 1, 1);
}

}  // namespace

TEST_CASE("demonstration pitch summary") {
  const auto s = summarize_pitch(demonstration_pitch_table());
  CHECK(s.mean == doctest::Approx(28.3).epsilon(0.002));
  CHECK(s.sample_std == doctest::Approx(4.6).epsilon(0.01));
  CHECK_THROWS_AS(summarize_pitch({{1.0}}), Error);
}

TEST_CASE("pitch estimation recovers a noisy tool line") {
  constexpr double pitch = 28.3;
  const double slope = std::tan(pitch * std::numbers::pi / 180.0);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> noise(0.0, 0.2);
  double sum = 0.0;
  constexpr int trials = 200;
  for (int t = 0; t < trials; ++t) {
    PointCloud c;
    for (int i = 0; i < 100; ++i) {
      const double x = 0.2 * i;
      c.points.emplace_back(x, 3.0, 5.0 - slope * x + noise(rng));
    }
    sum += estimate_pitch(c);
  }
  CHECK(std::abs(sum / trials - pitch) < 0.3);
}

TEST_CASE("pitch estimation rejects degenerate input") {
  PointCloud c;
  c.points = {Point3(1, 0, 0), Point3(1, 0, 5)};
  CHECK_THROWS_AS(estimate_pitch(c), Error);
  c.points.resize(1);
  CHECK_THROWS_AS(estimate_pitch(c), Error);
}

TEST_CASE("stations sit at cell centers of the tumor extent") {
  const auto plan = plan_cuts(plane(0.0), tumor_box_cloud(-5, 5, 10, 40, 3));
  REQUIRE(plan.stations.size() == 6);
  for (int k = 0; k < 6; ++k) CHECK(plan.stations[k] == doctest::Approx(12.5 + 5.0 * k));
  CHECK(plan.station_spacing() == doctest::Approx(5.0));
  for (std::size_t k = 0; k < 6; ++k)
    for (const auto& wp : plan.paths[k]) CHECK(wp.position.y() == doctest::Approx(plan.stations[k]));
}

TEST_CASE("timestamps follow arc length at constant speed") {
  std::vector<Waypoint> path;
  for (int i = 0; i <= 120; ++i) path.push_back(Waypoint{Point3(0.5 * i - 30.0, 0, 0)});
  assign_timestamps(path, 2.0);
  CHECK(path_length(path) == doctest::Approx(60.0));
  CHECK(path.front().t_s == 0.0);
  CHECK(path.back().t_s == doctest::Approx(30.0));
  for (std::size_t i = 1; i < path.size(); ++i) CHECK(path[i].t_s > path[i - 1].t_s);
  CHECK_THROWS_AS(assign_timestamps(path, 0.0), Error);
}

TEST_CASE("each path is a forward sweep followed by its exact retrace") {
  const auto plan = plan_cuts(plane(1.0), tumor_box_cloud(-6, 6, 20, 50, 8));
  for (const auto& path : plan.paths) {
    const std::size_t n = path.size();
    REQUIRE(n % 2 == 0);
    for (std::size_t i = 0; i < n / 2; ++i) {
      CHECK(path[i].dir == TravelDir::pos_x);
      CHECK(path[n - 1 - i].dir == TravelDir::neg_x);
      CHECK((path[i].position - path[n - 1 - i].position).norm() == 0.0);
    }
    for (std::size_t i = 1; i < n / 2; ++i) CHECK(path[i].position.x() > path[i - 1].position.x());
  }
  CHECK(plan.home.z() > 8.0);
}

TEST_CASE("1000 random plans keep clearance and never perforate") {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::size_t waypoints = 0;
  double worst_clearance_error = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    TracheaSpec spec;
    spec.seed = static_cast<std::uint64_t>(trial + 1);
    const TracheaSurface s(spec);
    const auto surface = fit_trachea(s);
    const double hw = s.half_width();
    const double width = 8.0 + 12.0 * u01(rng);
    const double cx = (u01(rng) - 0.5) * 4.0;
    const double y0 = 5.0 + 30.0 * u01(rng);
    const double len = 10.0 + 25.0 * u01(rng);
    PlanConfig cfg;
    cfg.clearance = 0.5 + 2.5 * u01(rng);
    cfg.cut_count = 1 + static_cast<int>(8.0 * u01(rng));
    cfg.x_limit = hw - 0.5;
    const auto plan = plan_cuts(surface, tumor_box_cloud(cx - width / 2, cx + width / 2, y0, y0 + len, 10.0), cfg);
    for (const auto& path : plan.paths)
      for (const auto& wp : path) {
        const auto& p = wp.position;
        worst_clearance_error = std::max(worst_clearance_error, std::abs(p.z() - evaluate(surface, p.x(), p.y()) - cfg.clearance));
        CHECK(std::abs(p.x()) <= hw - 0.5 + 1e-12);
        if (!(p.z() > s.height(p.x(), p.y()))) FAIL("waypoint below the trachea surface");
        ++waypoints;
      }
  }
  CHECK(worst_clearance_error <= 1e-9);
  CHECK(waypoints > 1000);
}

TEST_CASE("a fixed frame overrides the tumor extent") {
  PlanConfig cfg;
  cfg.frame = PlanFrame{10.0, 30.0, -5.0, 5.0};
  const auto plan = plan_cuts(plane(0.0), tumor_box_cloud(-1, 1, 30, 32, 2), cfg);
  CHECK(plan.stations.front() == doctest::Approx(12.5));
  CHECK(plan.stations.back() == doctest::Approx(37.5));
  const auto empty_ok = plan_cuts(plane(0.0), PointCloud{}, cfg);
  CHECK(empty_ok.paths.size() == 6);
}

TEST_CASE("planning preconditions") {
  CHECK_THROWS_AS(plan_cuts(plane(0.0), PointCloud{}), Error);
  CHECK_THROWS_AS(plan_cuts(plane(0.0), tumor_box_cloud(0, 0.4, 10, 10.4, 1)), Error);
  PlanConfig cfg;
  cfg.per_cut_pitch_deg = {20.0, 30.0};
  CHECK_THROWS_AS(plan_cuts(plane(0.0), tumor_box_cloud(-5, 5, 10, 40, 3), cfg), Error);
  cfg = {};
  cfg.cut_count = 0;
  CHECK_THROWS_AS(plan_cuts(plane(0.0), tumor_box_cloud(-5, 5, 10, 40, 3), cfg), Error);
}

TEST_CASE("plan consistency RMSE measures the vertical offset of a shared path") {
  const auto tumor = tumor_box_cloud(-5, 5, 10, 40, 3);
  PlanConfig cfg;
  cfg.frame = frame_from_tumor(tumor);
  const auto a = plan_cuts(plane(0.0), tumor, cfg);
  const auto b = plan_cuts(plane(0.7), tumor, cfg);
  CHECK(plan_consistency_rmse(a, a, 2) == doctest::Approx(0.0));
  CHECK(plan_consistency_rmse(a, b, 2) == doctest::Approx(0.7).epsilon(1e-9));
  CHECK_THROWS_AS(plan_consistency_rmse(a, b, 6), Error);
}

TEST_CASE("cut plan JSON round trip") {
  const auto plan = plan_cuts(plane(0.5), tumor_box_cloud(-4, 4, 15, 35, 3));
  const auto back = Json(plan).get<CutPlan>();
  REQUIRE(back.paths.size() == plan.paths.size());
  CHECK(back.stations == plan.stations);
  CHECK(plan_consistency_rmse(plan, back, 3) == doctest::Approx(0.0));
  CHECK((back.home - plan.home).norm() < 1e-12);
}
