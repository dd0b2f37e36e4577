#include "issl/types.hpp"

#include <Eigen/LU>
#include <cmath>
#include <numeric>

#include "fmt/format.h"

namespace issl {

void CameraIntrinsics::validate() const {
  if (!(std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) && std::isfinite(cy))) {
    throw ValidationError("intrinsics must be finite");
  }
  if (fx <= 0.0 || fy <= 0.0) {
    throw ValidationError(fmt::format("focal lengths must be positive, got fx={} fy={}", fx, fy));
  }
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = fx;
  k(1, 1) = fy;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return k;
}

Eigen::Matrix3d CameraIntrinsics::inverse_matrix() const {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = 1.0 / fx;
  k(1, 1) = 1.0 / fy;
  k(0, 2) = -cx / fx;
  k(1, 2) = -cy / fy;
  return k;
}

void DepthMap::validate() const {
  if (width <= 0 || height <= 0 || values.size() != static_cast<size_t>(width) * height) {
    throw ValidationError("depth map has inconsistent dimensions");
  }
  for (double d : values) {
    if (!std::isfinite(d) || d <= 0.0) {
      throw ValidationError(fmt::format("depth map contains non-positive or non-finite value {}", d));
    }
  }
}

void Image::validate() const {
  if (channels != 1 && channels != 3) {
    throw ValidationError(fmt::format("image must have 1 or 3 channels, got {}", channels));
  }
  if (width <= 0 || height <= 0 ||
      values.size() != static_cast<size_t>(width) * height * channels) {
    throw ValidationError("image has inconsistent dimensions");
  }
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ValidationError(fmt::format("image value {} outside [0,1]", v));
    }
  }
}

std::int64_t ValidityMask::count() const {
  std::int64_t n = 0;
  for (std::uint8_t v : values) n += (v != 0);
  return n;
}

void RigidMotion::validate() const {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw ValidationError("rigid motion parameters must be finite");
  }
}

void TransformMatrix::validate() const {
  if (!m.allFinite()) {
    throw ValidationError("transform matrix must be finite");
  }
  if (m(3, 0) != 0.0 || m(3, 1) != 0.0 || m(3, 2) != 0.0 || m(3, 3) != 1.0) {
    throw ValidationError("transform matrix bottom row must be (0,0,0,1)");
  }
  const Eigen::Matrix3d r = rotation();
  const double ortho_err = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho_err > 1e-9) {
    throw ValidationError(fmt::format("rotation block not orthonormal (max deviation {})", ortho_err));
  }
  if (std::abs(r.determinant() - 1.0) > 1e-9) {
    throw ValidationError("rotation block must have determinant +1");
  }
}

}  // namespace issl
