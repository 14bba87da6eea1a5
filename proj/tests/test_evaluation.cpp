#include <doctest.h>

#include <cmath>
#include <sstream>

#include "resectsim/error.hpp"
#include "resectsim/evaluation.hpp"
#include "resectsim/phantom.hpp"

using namespace resectsim;

namespace {

SceneState flat_scene(double radius, double diameter, double height) {
  TracheaSpec t;
  t.shape = SurfaceShape::flat;
  t.noise_amp = 0.0;
  t.radius = radius;
  TumorSpec tumor;
  tumor.diameter = diameter;
  tumor.height = height;
  return generate_phantom(t, tumor);
}

PolySurface flat_goal(double z0) {
  PointCloud c;
  for (double x = -10; x <= 10; x += 1)
    for (double y = 0; y <= 75; y += 2.5) c.points.emplace_back(x, y, z0);
  return fit_poly(c, 1, 1);
}

}  // namespace

TEST_CASE("removal percent") {
  CHECK(removal_percent(200.0, 50.0) == doctest::Approx(25.0));
  CHECK(removal_percent(200.0, 220.0) == doctest::Approx(110.0));
  CHECK_THROWS_AS(removal_percent(0.0, 1.0), Error);
  CHECK_THROWS_AS(removal_percent(1.0, -1.0), Error);
}

TEST_CASE("a 10 mm tumor in a 20 mm lumen leaves half the lumen open") {
  const auto scene = flat_scene(10.0, 16.0, 10.0);
  // Direct column scan of the tallest occupied voxel top.
  const auto& g = scene.tumor;
  double tallest = 0.0;
  for (std::size_t idx = 0; idx < g.size(); ++idx)
    if (g.occupied(idx)) tallest = std::max(tallest, g.center(idx).z() + 0.5 * g.resolution());
  const double oracle = 100.0 * (20.0 - tallest) / 20.0;
  const double lumen = lumen_reopening(scene, 20.0);
  CHECK(lumen == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(std::abs(lumen - 50.0) <= 100.0 * g.resolution() / 20.0);
  CHECK_FALSE(lumen_success(50.0));
  CHECK(lumen_success(50.1));
}

TEST_CASE("lumen reopening is clamped and reaches 100 without tumor") {
  auto scene = flat_scene(10.0, 16.0, 10.0);
  CHECK(lumen_reopening(scene, 5.0) == 0.0);
  for (std::size_t idx = 0; idx < scene.tumor.size(); ++idx) scene.tumor.set_occupied(idx, false);
  CHECK(lumen_reopening(scene, 20.0) == doctest::Approx(100.0));
  CHECK_THROWS_AS(lumen_reopening(scene, 0.0), Error);
}

TEST_CASE("post-cut RMSE of a char layer offset by 2 mm is 2") {
  auto scene = flat_scene(16.0, 20.0, 12.0);
  auto& g = scene.tumor;
  const int k = g.dims()[2] / 3;
  double layer_z = 0.0;
  std::size_t charred = 0;
  for (int j = 0; j < g.dims()[1]; ++j)
    for (int i = 0; i < g.dims()[0]; ++i) {
      const auto idx = g.linear(i, j, k);
      if (!g.occupied(idx)) continue;
      g.set_charred(idx, true);
      layer_z = g.center(idx).z();
      ++charred;
    }
  REQUIRE(charred > 100);
  const double clearance = 1.0;
  CHECK(postcut_rmse(scene, flat_goal(layer_z - clearance - 2.0), clearance) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(postcut_rmse(scene, flat_goal(layer_z - clearance), clearance) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("post-cut RMSE is undefined without charred voxels") {
  const auto scene = flat_scene(16.0, 20.0, 12.0);
  try {
    postcut_rmse(scene, flat_goal(0.0), 1.0);
    FAIL("expected metric_undefined");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::metric_undefined);
  }
}

TEST_CASE("IoU summary uses the sample standard deviation") {
  const auto s = summarize_iou({0.8, 0.9, 1.0});
  CHECK(s.n == 3);
  CHECK(s.mean == doctest::Approx(0.9));
  CHECK(s.std == doctest::Approx(0.1));
  CHECK(s.std_defined);
  const auto one = summarize_iou({0.7});
  CHECK_FALSE(one.std_defined);
  CHECK(one.std == 0.0);
  CHECK(summarize_iou({}).n == 0);
}

TEST_CASE("IoU statistics are gathered from detection events") {
  std::vector<Event> events{
      {1, 0.0, "run_started", Json::object()},
      {2, 0.0, "detection", {{"iou", {{"trachea", 1.0}, {"tumor", 0.5}}}}},
      {3, 1.0, "detection", {{"iou", {{"trachea", 0.8}, {"tumor", nullptr}}}}},
  };
  const auto stats = iou_stats(events);
  CHECK(stats.trachea.n == 2);
  CHECK(stats.trachea.mean == doctest::Approx(0.9));
  CHECK(stats.tumor.n == 1);
}

TEST_CASE("metrics JSON round trip and table") {
  ProcedureMetrics m;
  m.removal_pct = 93.2;
  m.postcut_rmse_mm = 0.66;
  m.lumen_pct = 97.1;
  m.success = true;
  m.iou.trachea = summarize_iou({1.0, 0.9});
  const auto back = metrics_from_json(metrics_to_json(m));
  CHECK(back.removal_pct == m.removal_pct);
  REQUIRE(back.postcut_rmse_mm.has_value());
  CHECK(*back.postcut_rmse_mm == *m.postcut_rmse_mm);
  CHECK(back.iou.trachea.std == doctest::Approx(m.iou.trachea.std));
  m.postcut_rmse_mm.reset();
  CHECK_FALSE(metrics_from_json(metrics_to_json(m)).postcut_rmse_mm.has_value());
  std::ostringstream out;
  print_metrics_table(out, m);
  CHECK(out.str().find("lumen reopening") != std::string::npos);
}
