#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "resectsim/error.hpp"

namespace resectsim {

// All lengths are millimeters. World frame: Z up, trachea axis along +Y,
// cut travel along X.
using Point3 = Eigen::Vector3d;

// Per-point / per-pixel class tag. Values are the PCD label ids.
enum class Label : std::uint8_t { background = 0, trachea = 1, tumor = 2, charred = 3 };

const char* to_string(Label label) noexcept;
Label label_from_string(const std::string& name);

struct PointCloud {
  std::vector<Point3> points;
  std::optional<std::vector<Label>> labels;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }

  // Throws contract_violation on label length mismatch or non-finite coordinates.
  void validate() const;
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  void validate() const;
};

// Row-major depth grid. 0 marks an invalid pixel.
struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<double> depth;

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), depth(static_cast<std::size_t>(w) * h, 0.0) {}

  double at(int u, int v) const { return depth[static_cast<std::size_t>(v) * width + u]; }
  double& at(int u, int v) { return depth[static_cast<std::size_t>(v) * width + u]; }

  void validate() const;
};

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int u, int v) const { return bits[static_cast<std::size_t>(v) * width + u] != 0; }
  void set(int u, int v, bool value = true) {
    bits[static_cast<std::size_t>(v) * width + u] = value ? 1 : 0;
  }
  std::size_t count() const;
};

class RigidTransform {
 public:
  RigidTransform() = default;
  // Throws contract_violation unless rotation is orthonormal with det +1 (1e-9).
  RigidTransform(const Eigen::Matrix3d& rotation, const Point3& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform translation(const Point3& t) {
    return RigidTransform(Eigen::Matrix3d::Identity(), t);
  }

  const Eigen::Matrix3d& rotation() const noexcept { return rotation_; }
  const Point3& translation() const noexcept { return translation_; }

  Point3 apply(const Point3& p) const { return rotation_ * p + translation_; }
  Point3 apply_direction(const Point3& d) const { return rotation_ * d; }
  RigidTransform inverse() const;

  // (a * b).apply(p) == a.apply(b.apply(p))
  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b);

 private:
  Eigen::Matrix3d rotation_ = Eigen::Matrix3d::Identity();
  Point3 translation_ = Point3::Zero();
};

enum class BoxSource { automatic, human };

const char* to_string(BoxSource source) noexcept;

// Pixel-edge coordinates: the box covers u_min <= u < u_max, v_min <= v < v_max.
struct BoundingBox2D {
  double u_min = 0.0;
  double v_min = 0.0;
  double u_max = 0.0;
  double v_max = 0.0;
  Label cls = Label::trachea;
  double cls_score = 1.0;
  BoxSource source = BoxSource::automatic;

  double area() const noexcept { return (u_max - u_min) * (v_max - v_min); }
  void validate() const;
  void validate_within(int width, int height) const;
};

// Pinhole back-projection of every masked pixel with depth > 0, in row-major order.
PointCloud project_depth_to_cloud(const DepthImage& depth, const BinaryMask& mask,
                                  const CameraIntrinsics& intrinsics);

PointCloud transform_cloud(const PointCloud& cloud, const RigidTransform& pose);

double bbox_iou(const BoundingBox2D& a, const BoundingBox2D& b);

inline constexpr double kDefaultSubtractionRadius = 0.5;

// Keeps the points of `base` whose nearest neighbor in `removal` is farther
// than `radius`. Stable order.
PointCloud subtract_cloud(const PointCloud& base, const PointCloud& removal,
                          double radius = kDefaultSubtractionRadius);

}  // namespace resectsim
