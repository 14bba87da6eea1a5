#include "resectsim/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace resectsim {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::contract_violation: return "contract_violation";
    case ErrorKind::config: return "config";
    case ErrorKind::fit: return "fit";
    case ErrorKind::planning: return "planning";
    case ErrorKind::selection: return "selection";
    case ErrorKind::segmentation_failed: return "segmentation_failed";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::empty_snapshot: return "empty_snapshot";
    case ErrorKind::metric_undefined: return "metric_undefined";
    case ErrorKind::comparison: return "comparison";
    case ErrorKind::estimation: return "estimation";
    case ErrorKind::io: return "io";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::conflict: return "conflict";
  }
  return "unknown";
}

const char* to_string(Label label) noexcept {
  switch (label) {
    case Label::background: return "background";
    case Label::trachea: return "trachea";
    case Label::tumor: return "tumor";
    case Label::charred: return "char";
  }
  return "unknown";
}

Label label_from_string(const std::string& name) {
  if (name == "background") return Label::background;
  if (name == "trachea") return Label::trachea;
  if (name == "tumor") return Label::tumor;
  if (name == "char") return Label::charred;
  fail(ErrorKind::contract_violation, "unknown class label '" + name + "'");
}

const char* to_string(BoxSource source) noexcept {
  return source == BoxSource::human ? "human" : "auto";
}

void PointCloud::validate() const {
  if (labels) require(labels->size() == points.size(), "label count does not match point count");
  for (const auto& p : points) require(p.allFinite(), "point cloud contains non-finite coordinates");
}

void CameraIntrinsics::validate() const {
  require(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
  require(std::isfinite(cx) && std::isfinite(cy), "principal point must be finite");
}

void DepthImage::validate() const {
  require(width >= 0 && height >= 0, "negative image size");
  require(depth.size() == static_cast<std::size_t>(width) * height, "depth grid size mismatch");
  for (double d : depth) require(std::isfinite(d) && d >= 0.0, "depth values must be finite and >= 0");
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

RigidTransform::RigidTransform(const Eigen::Matrix3d& rotation, const Point3& translation)
    : rotation_(rotation), translation_(translation) {
  require(rotation.allFinite() && translation.allFinite(), "transform must be finite");
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  require(ortho <= 1e-9, "rotation is not orthonormal");
  require(std::abs(rotation.determinant() - 1.0) <= 1e-9, "rotation determinant is not +1");
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.rotation_ = rotation_.transpose();
  out.translation_ = -(out.rotation_ * translation_);
  return out;
}

RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation_ = a.rotation_ * b.rotation_;
  out.translation_ = a.rotation_ * b.translation_ + a.translation_;
  return out;
}

void BoundingBox2D::validate() const {
  require(u_min < u_max && v_min < v_max, "bounding box must have positive extent");
  require(cls == Label::trachea || cls == Label::tumor, "bounding box class must be trachea or tumor");
  require(cls_score >= 0.0 && cls_score <= 1.0, "classification score must lie in [0,1]");
}

void BoundingBox2D::validate_within(int width, int height) const {
  validate();
  require(u_min >= 0.0 && v_min >= 0.0 && u_max <= width && v_max <= height,
          "bounding box exceeds image bounds");
}

PointCloud project_depth_to_cloud(const DepthImage& depth, const BinaryMask& mask,
                                  const CameraIntrinsics& intrinsics) {
  require(depth.width == mask.width && depth.height == mask.height,
          "mask dimensions do not match depth image");
  require(depth.depth.size() == static_cast<std::size_t>(depth.width) * depth.height,
          "depth grid size mismatch");
  intrinsics.validate();

  PointCloud cloud;
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      if (!mask.at(u, v)) continue;
      const double z = depth.at(u, v);
      if (!(z > 0.0)) continue;
      cloud.points.emplace_back((u - intrinsics.cx) * z / intrinsics.fx,
                                (v - intrinsics.cy) * z / intrinsics.fy, z);
    }
  }
  return cloud;
}

PointCloud transform_cloud(const PointCloud& cloud, const RigidTransform& pose) {
  PointCloud out;
  out.points.reserve(cloud.points.size());
  for (const auto& p : cloud.points) out.points.push_back(pose.apply(p));
  out.labels = cloud.labels;
  return out;
}

double bbox_iou(const BoundingBox2D& a, const BoundingBox2D& b) {
  const double iw = std::min(a.u_max, b.u_max) - std::max(a.u_min, b.u_min);
  const double ih = std::min(a.v_max, b.v_max) - std::max(a.v_min, b.v_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

namespace {

struct CellKey {
  std::int64_t i, j, k;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& c) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(c.i) * 73856093ULL;
    h ^= static_cast<std::uint64_t>(c.j) * 19349663ULL;
    h ^= static_cast<std::uint64_t>(c.k) * 83492791ULL;
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

PointCloud subtract_cloud(const PointCloud& base, const PointCloud& removal, double radius) {
  require(radius > 0.0, "subtraction radius must be positive");
  if (removal.empty()) return base;

  // Uniform hash grid with cell size == radius; any neighbor within radius
  // lives in the 27 surrounding cells.
  const double inv = 1.0 / radius;
  auto key_of = [inv](const Point3& p) {
    return CellKey{static_cast<std::int64_t>(std::floor(p.x() * inv)),
                   static_cast<std::int64_t>(std::floor(p.y() * inv)),
                   static_cast<std::int64_t>(std::floor(p.z() * inv))};
  };
  std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> grid;
  grid.reserve(removal.size());
  for (std::size_t i = 0; i < removal.size(); ++i) grid[key_of(removal.points[i])].push_back(i);

  const double r2 = radius * radius;
  PointCloud out;
  std::vector<Label> labels;
  for (std::size_t idx = 0; idx < base.size(); ++idx) {
    const Point3& p = base.points[idx];
    const CellKey c = key_of(p);
    bool close = false;
    for (std::int64_t di = -1; di <= 1 && !close; ++di) {
      for (std::int64_t dj = -1; dj <= 1 && !close; ++dj) {
        for (std::int64_t dk = -1; dk <= 1 && !close; ++dk) {
          auto it = grid.find({c.i + di, c.j + dj, c.k + dk});
          if (it == grid.end()) continue;
          for (std::size_t r : it->second) {
            if ((removal.points[r] - p).squaredNorm() <= r2) {
              close = true;
              break;
            }
          }
        }
      }
    }
    if (close) continue;
    out.points.push_back(p);
    if (base.labels) labels.push_back((*base.labels)[idx]);
  }
  if (base.labels) out.labels = std::move(labels);
  return out;
}

}  // namespace resectsim
