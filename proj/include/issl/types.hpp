#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "issl/errors.hpp"

namespace issl {

/// Pinhole intrinsics, zero skew. Integer pixel coordinates address pixel
/// centers; (u, v) = (column, row).
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  void validate() const;
  Eigen::Matrix3d matrix() const;
  Eigen::Matrix3d inverse_matrix() const;  // closed form
};

/// Per-pixel metric depth, row-major, strictly positive and finite.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  DepthMap() = default;
  DepthMap(int w, int h, double fill = 0.0) : width(w), height(h), values(static_cast<size_t>(w) * h, fill) {}

  double& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
  double at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return values.size(); }
  void validate() const;
};

/// Planar image, values in [0,1], layout (channel, row, col).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> values;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), values(static_cast<size_t>(w) * h * c, fill) {}

  double& at(int c, int y, int x) {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
  size_t plane_size() const { return static_cast<size_t>(width) * height; }
  void validate() const;
};

/// Binary per-pixel mask, row-major.
struct ValidityMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;

  ValidityMask() = default;
  ValidityMask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), values(static_cast<size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
  std::int64_t count() const;
};

/// Continuous per-pixel sampling coordinates. Non-finite entries mark
/// pixels whose geometry was degenerate (behind the near plane).
struct SampleGrid {
  int width = 0;
  int height = 0;
  std::vector<double> u;
  std::vector<double> v;

  SampleGrid() = default;
  SampleGrid(int w, int h)
      : width(w), height(h), u(static_cast<size_t>(w) * h, 0.0), v(static_cast<size_t>(w) * h, 0.0) {}
};

/// Per-pixel 3D points in the camera frame, same raster shape as the depth
/// map they were lifted from.
struct PointCloud {
  int width = 0;
  int height = 0;
  std::vector<Eigen::Vector3d> points;

  PointCloud() = default;
  PointCloud(int w, int h) : width(w), height(h), points(static_cast<size_t>(w) * h) {}

  Eigen::Vector3d& at(int x, int y) { return points[static_cast<size_t>(y) * width + x]; }
  const Eigen::Vector3d& at(int x, int y) const { return points[static_cast<size_t>(y) * width + x]; }
};

/// 6-DoF rigid motion: axis-angle rotation (radians) + translation (m).
struct RigidMotion {
  Eigen::Vector3d rotation{0.0, 0.0, 0.0};
  Eigen::Vector3d translation{0.0, 0.0, 0.0};

  void validate() const;
};

/// 4x4 homogeneous rigid transform. Rotation block orthonormal with
/// det +1 (tol 1e-9), bottom row exactly (0,0,0,1).
struct TransformMatrix {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();

  void validate() const;
  Eigen::Matrix3d rotation() const { return m.block<3, 3>(0, 0); }
  Eigen::Vector3d translation() const { return m.block<3, 1>(0, 3); }
};

}  // namespace issl
