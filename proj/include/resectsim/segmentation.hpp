#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "resectsim/geometry.hpp"
#include "resectsim/phantom.hpp"

namespace resectsim {

// Synthetic detector over ground-truth labels. Scores are drawn from a
// clamped normal; a failed class gets a grossly shifted box and a score
// below the threshold.
struct DetectorConfig {
  double score_threshold = 0.70;
  double jitter_sigma = 0.0;  // pixels, per box edge
  double score_mean = 0.92;
  double score_sd = 0.03;
  double trachea_failure_prob = 0.0;
  double tumor_failure_prob = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Tight box around every pixel labeled `cls`, or nullopt if the class is absent.
std::optional<BoundingBox2D> ground_truth_box(const LabelImage& labels, Label cls);

std::vector<BoundingBox2D> detect(const Snapshot& snapshot, const DetectorConfig& config);

// Pixels whose center lies in the box and whose label equals the box class.
BinaryMask mask_from_box(const Snapshot& snapshot, const BoundingBox2D& box);

struct SegmentationResult {
  PointCloud trachea;  // camera frame
  PointCloud tumor;    // camera frame
  std::vector<BoundingBox2D> boxes;
  bool needs_human = false;
  BoxSource source = BoxSource::automatic;
};

// Keeps the highest-scoring box per class.
std::vector<BoundingBox2D> dedupe_boxes(const std::vector<BoundingBox2D>& boxes);

// Throws segmentation_failed when there is no trachea box.
SegmentationResult segment(const Snapshot& snapshot, const std::vector<BoundingBox2D>& boxes,
                           double subtraction_radius = kDefaultSubtractionRadius,
                           double score_threshold = 0.70);

}  // namespace resectsim
