#include "resectsim/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace resectsim {

void DetectorConfig::validate() const {
  if (!(score_threshold > 0.0 && score_threshold <= 1.0)) fail(ErrorKind::config, "score threshold must lie in (0, 1]");
  if (!(jitter_sigma >= 0.0)) fail(ErrorKind::config, "jitter sigma must be >= 0");
  if (!(score_sd >= 0.0)) fail(ErrorKind::config, "score sd must be >= 0");
  for (double p : {trachea_failure_prob, tumor_failure_prob})
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::config, "failure probability must lie in [0, 1]");
}

std::optional<BoundingBox2D> ground_truth_box(const LabelImage& labels, Label cls) {
  int u0 = labels.width, v0 = labels.height, u1 = -1, v1 = -1;
  for (int v = 0; v < labels.height; ++v) {
    for (int u = 0; u < labels.width; ++u) {
      if (labels.at(u, v) != cls) continue;
      u0 = std::min(u0, u);
      v0 = std::min(v0, v);
      u1 = std::max(u1, u);
      v1 = std::max(v1, v);
    }
  }
  if (u1 < 0) return std::nullopt;
  BoundingBox2D box;
  box.u_min = u0;
  box.v_min = v0;
  box.u_max = u1 + 1;
  box.v_max = v1 + 1;
  box.cls = cls;
  box.cls_score = 1.0;
  return box;
}

namespace {

// Clamp a perturbed box into the image, keeping at least one pixel of extent.
void clamp_box(BoundingBox2D& b, int width, int height) {
  auto fix = [](double& lo, double& hi, double limit) {
    if (lo > hi) std::swap(lo, hi);
    lo = std::clamp(lo, 0.0, limit - 1.0);
    hi = std::clamp(hi, lo + 1.0, limit);
  };
  fix(b.u_min, b.u_max, width);
  fix(b.v_min, b.v_max, height);
}

}  // namespace

std::vector<BoundingBox2D> detect(const Snapshot& snapshot, const DetectorConfig& config) {
  config.validate();
  const int w = snapshot.labels.width;
  const int h = snapshot.labels.height;
  require(w > 0 && h > 0, "snapshot has no label image");

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  std::vector<BoundingBox2D> boxes;
  for (Label cls : {Label::trachea, Label::tumor}) {
    // Draw the same number of variates per class regardless of outcome so
    // one class's result never shifts the other's stream.
    const double j[4] = {gauss(rng), gauss(rng), gauss(rng), gauss(rng)};
    const double score_draw = gauss(rng);
    const double fail_draw = uni(rng);
    const double shift_draw = uni(rng);
    const double side_draw = uni(rng);
    const double low_score_draw = uni(rng);

    auto gt = ground_truth_box(snapshot.labels, cls);
    if (!gt) continue;
    BoundingBox2D box = *gt;
    box.u_min += config.jitter_sigma * j[0];
    box.v_min += config.jitter_sigma * j[1];
    box.u_max += config.jitter_sigma * j[2];
    box.v_max += config.jitter_sigma * j[3];
    box.cls_score = std::clamp(config.score_mean + config.score_sd * score_draw, 0.0, 1.0);
    box.source = BoxSource::automatic;

    const double p_fail = cls == Label::trachea ? config.trachea_failure_prob : config.tumor_failure_prob;
    if (fail_draw < p_fail) {
      const double shift = (0.25 + 0.15 * shift_draw) * w;
      const double width = box.u_max - box.u_min;
      const bool right = side_draw < 0.5;
      if (right && box.u_min + shift + 1.0 <= w) {
        box.u_min += shift;
        box.u_max = std::min<double>(w, box.u_max + shift);
      } else if (box.u_max - shift - 1.0 >= 0.0) {
        box.u_max -= shift;
        box.u_min = std::max(0.0, box.u_min - shift);
      } else {
        // Shift not representable inside the image; move the box to the far side.
        box.u_min = right ? std::max(0.0, w - width) : 0.0;
        box.u_max = right ? w : std::min<double>(w, width);
      }
      box.cls_score = (0.3 + (config.score_threshold - 0.35) * low_score_draw);
      box.cls_score = std::clamp(box.cls_score, 0.0, std::nextafter(config.score_threshold, 0.0));
    }
    clamp_box(box, w, h);
    boxes.push_back(box);
  }
  return boxes;
}

BinaryMask mask_from_box(const Snapshot& snapshot, const BoundingBox2D& box) {
  const auto& labels = snapshot.labels;
  box.validate_within(labels.width, labels.height);
  BinaryMask mask(labels.width, labels.height);
  const int u0 = std::max(0, static_cast<int>(std::floor(box.u_min - 0.5)));
  const int u1 = std::min(labels.width - 1, static_cast<int>(std::ceil(box.u_max)));
  const int v0 = std::max(0, static_cast<int>(std::floor(box.v_min - 0.5)));
  const int v1 = std::min(labels.height - 1, static_cast<int>(std::ceil(box.v_max)));
  for (int v = v0; v <= v1; ++v) {
    const double vc = v + 0.5;
    if (vc < box.v_min || vc >= box.v_max) continue;
    for (int u = u0; u <= u1; ++u) {
      const double uc = u + 0.5;
      if (uc < box.u_min || uc >= box.u_max) continue;
      if (labels.at(u, v) == box.cls) mask.set(u, v);
    }
  }
  return mask;
}

std::vector<BoundingBox2D> dedupe_boxes(const std::vector<BoundingBox2D>& boxes) {
  std::vector<BoundingBox2D> out;
  for (const auto& b : boxes) {
    auto it = std::find_if(out.begin(), out.end(), [&](const BoundingBox2D& o) { return o.cls == b.cls; });
    if (it == out.end()) {
      out.push_back(b);
    } else if (b.cls_score > it->cls_score) {
      *it = b;
    }
  }
  return out;
}

SegmentationResult segment(const Snapshot& snapshot, const std::vector<BoundingBox2D>& boxes,
                           double subtraction_radius, double score_threshold) {
  require(snapshot.labels.width == snapshot.depth.width && snapshot.labels.height == snapshot.depth.height,
          "label image dimensions do not match depth image");
  SegmentationResult result;
  result.boxes = dedupe_boxes(boxes);

  const BoundingBox2D* trachea_box = nullptr;
  const BoundingBox2D* tumor_box = nullptr;
  for (const auto& b : result.boxes) {
    if (b.cls == Label::trachea) trachea_box = &b;
    if (b.cls == Label::tumor) tumor_box = &b;
  }
  if (!trachea_box) fail(ErrorKind::segmentation_failed, "no trachea bounding box");

  bool any_human = false;
  bool low_score = false;
  for (const auto& b : result.boxes) {
    if (b.source == BoxSource::human) {
      any_human = true;
    } else if (b.cls_score < score_threshold) {
      low_score = true;
    }
  }
  result.source = any_human ? BoxSource::human : BoxSource::automatic;
  result.needs_human = low_score || !tumor_box;

  if (tumor_box) {
    result.tumor = project_depth_to_cloud(snapshot.depth, mask_from_box(snapshot, *tumor_box), snapshot.intrinsics);
  }
  const auto trachea =
      project_depth_to_cloud(snapshot.depth, mask_from_box(snapshot, *trachea_box), snapshot.intrinsics);
  result.trachea = subtract_cloud(trachea, result.tumor, subtraction_radius);
  return result;
}

}  // namespace resectsim
