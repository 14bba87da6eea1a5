#include <doctest.h>

#include <cmath>
#include <random>

#include "resectsim/error.hpp"
#include "resectsim/phantom.hpp"
#include "resectsim/segmentation.hpp"

using namespace resectsim;

namespace {

// 200 x 200 image: trachea everywhere, tumor rectangle u in [60, 140), v in [70, 130).
Snapshot synthetic_snapshot() {
  Snapshot s;
  s.labels = LabelImage(200, 200);
  s.depth = DepthImage(200, 200);
  s.intrinsics = CameraIntrinsics{200.0, 200.0, 100.0, 100.0};
  for (int v = 0; v < 200; ++v)
    for (int u = 0; u < 200; ++u) {
      const bool tumor = u >= 60 && u < 140 && v >= 70 && v < 130;
      s.labels.at(u, v) = tumor ? Label::tumor : Label::trachea;
      s.depth.at(u, v) = tumor ? 240.0 : 250.0;
    }
  return s;
}

}  // namespace

TEST_CASE("ground-truth boxes are tight pixel-edge boxes") {
  const auto snap = synthetic_snapshot();
  const auto tumor = ground_truth_box(snap.labels, Label::tumor);
  REQUIRE(tumor.has_value());
  CHECK(tumor->u_min == 60);
  CHECK(tumor->u_max == 140);
  CHECK(tumor->v_min == 70);
  CHECK(tumor->v_max == 130);
  CHECK_FALSE(ground_truth_box(snap.labels, Label::charred).has_value());
}

TEST_CASE("detector without jitter reproduces ground truth") {
  const auto snap = synthetic_snapshot();
  DetectorConfig cfg;
  cfg.seed = 3;
  const auto boxes = detect(snap, cfg);
  REQUIRE(boxes.size() == 2);
  for (const auto& b : boxes) {
    CHECK(bbox_iou(b, *ground_truth_box(snap.labels, b.cls)) == doctest::Approx(1.0));
    CHECK(b.cls_score >= 0.0);
    CHECK(b.cls_score <= 1.0);
    CHECK(b.source == BoxSource::automatic);
  }
  CHECK(detect(snap, cfg)[0].cls_score == boxes[0].cls_score);
}

TEST_CASE("jittered detector IoU matches an independent Monte Carlo estimate") {
  const auto snap = synthetic_snapshot();
  const auto gt = *ground_truth_box(snap.labels, Label::tumor);
  constexpr double sigma = 5.0;

  double detector_mean = 0.0;
  for (std::uint64_t seed = 1; seed <= 500; ++seed) {
    DetectorConfig cfg;
    cfg.jitter_sigma = sigma;
    cfg.seed = seed;
    for (const auto& b : detect(snap, cfg))
      if (b.cls == Label::tumor) detector_mean += bbox_iou(b, gt) / 500.0;
  }

  std::mt19937 rng(2024);
  std::normal_distribution<double> n(0.0, sigma);
  double oracle_mean = 0.0;
  constexpr int draws = 200000;
  for (int i = 0; i < draws; ++i) {
    const double u0 = gt.u_min + n(rng), v0 = gt.v_min + n(rng), u1 = gt.u_max + n(rng), v1 = gt.v_max + n(rng);
    const double iw = std::max(0.0, std::min(u1, gt.u_max) - std::max(u0, gt.u_min));
    const double ih = std::max(0.0, std::min(v1, gt.v_max) - std::max(v0, gt.v_min));
    const double inter = iw * ih;
    oracle_mean += inter / ((u1 - u0) * (v1 - v0) + gt.area() - inter) / draws;
  }
  CHECK(std::abs(detector_mean - oracle_mean) < 0.02);
  CHECK(detector_mean < 0.98);
}

TEST_CASE("a forced detector failure gives a low score and a displaced box") {
  const auto snap = synthetic_snapshot();
  DetectorConfig cfg;
  cfg.tumor_failure_prob = 1.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    cfg.seed = seed;
    for (const auto& b : detect(snap, cfg)) {
      if (b.cls != Label::tumor) continue;
      CHECK(b.cls_score < cfg.score_threshold);
      CHECK(bbox_iou(b, *ground_truth_box(snap.labels, Label::tumor)) < 0.5);
    }
  }
}

TEST_CASE("segmentation splits trachea and tumor clouds") {
  const auto snap = synthetic_snapshot();
  DetectorConfig cfg;
  const auto result = segment(snap, detect(snap, cfg));
  CHECK_FALSE(result.needs_human);
  CHECK(result.source == BoxSource::automatic);
  CHECK(result.tumor.size() == 80 * 60);
  CHECK(result.trachea.size() == 200 * 200 - 80 * 60);
  for (const auto& p : result.tumor.points) CHECK(p.z() == 240.0);
}

TEST_CASE("segmentation flags missing or low-confidence boxes") {
  const auto snap = synthetic_snapshot();
  auto trachea = *ground_truth_box(snap.labels, Label::trachea);
  auto tumor = *ground_truth_box(snap.labels, Label::tumor);
  trachea.cls_score = tumor.cls_score = 0.9;

  CHECK(segment(snap, {trachea}).needs_human);
  auto weak = tumor;
  weak.cls_score = 0.4;
  CHECK(segment(snap, {trachea, weak}).needs_human);
  CHECK_THROWS_AS(segment(snap, {tumor}), Error);

  auto human = tumor;
  human.cls_score = 0.1;
  human.source = BoxSource::human;
  const auto r = segment(snap, {trachea, human});
  CHECK_FALSE(r.needs_human);
  CHECK(r.source == BoxSource::human);
}

TEST_CASE("dedupe keeps the best box per class") {
  BoundingBox2D a{0, 0, 10, 10, Label::tumor, 0.5};
  BoundingBox2D b{5, 5, 20, 20, Label::tumor, 0.8};
  BoundingBox2D c{0, 0, 50, 50, Label::trachea, 0.9};
  const auto out = dedupe_boxes({a, b, c});
  REQUIRE(out.size() == 2);
  for (const auto& box : out)
    if (box.cls == Label::tumor) CHECK(box.cls_score == 0.8);
}

TEST_CASE("invalid detector configuration") {
  DetectorConfig cfg;
  cfg.jitter_sigma = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.tumor_failure_prob = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
