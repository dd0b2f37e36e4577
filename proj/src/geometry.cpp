#include "issl/geometry.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace issl::geometry {

namespace detail {

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return s;
}

Eigen::Matrix3d rodrigues_general(const Eigen::Vector3d& aa) {
  const double theta = aa.norm();
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  const Eigen::Matrix3d k = skew(aa);
  return Eigen::Matrix3d::Identity() + a * k + b * (k * k);
}

Eigen::Matrix3d rodrigues_taylor(const Eigen::Vector3d& aa) {
  const double t2 = aa.squaredNorm();
  const double a = 1.0 - t2 / 6.0;
  const double b = 0.5 - t2 / 24.0;
  const Eigen::Matrix3d k = skew(aa);
  return Eigen::Matrix3d::Identity() + a * k + b * (k * k);
}

}  // namespace detail

Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& aa) {
  if (aa.norm() < kRodriguesTaylorThreshold) {
    return detail::rodrigues_taylor(aa);
  }
  return detail::rodrigues_general(aa);
}

Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& r) {
  const double cos_theta = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(cos_theta);

  if (theta < kRodriguesTaylorThreshold) {
    // Near identity: R - R^T = 2 sin(t) K, and sin(t)/t -> 1.
    Eigen::Vector3d w;
    w << (r(2, 1) - r(1, 2)), (r(0, 2) - r(2, 0)), (r(1, 0) - r(0, 1));
    return 0.5 * w;
  }

  if (theta < std::numbers::pi - 1e-6) {
    Eigen::Vector3d w;
    w << (r(2, 1) - r(1, 2)), (r(0, 2) - r(2, 0)), (r(1, 0) - r(0, 1));
    return (theta / (2.0 * std::sin(theta))) * w;
  }

  // Near pi the antisymmetric part vanishes; recover the axis from
  // R + I = 2 (axis axis^T) (at exactly pi), taking the column with the
  // largest diagonal entry for stability.
  const Eigen::Matrix3d s = r + Eigen::Matrix3d::Identity();
  int col = 0;
  s.diagonal().maxCoeff(&col);
  Eigen::Vector3d axis = s.col(col);
  axis.normalize();
  // Deterministic sign: first component with magnitude above a loose
  // threshold is made positive.
  for (int i = 0; i < 3; ++i) {
    if (std::abs(axis[i]) > 1e-6) {
      if (axis[i] < 0.0) axis = -axis;
      break;
    }
  }
  return theta * axis;
}

Eigen::Vector3d canonical_axis_angle(const Eigen::Vector3d& aa) {
  const double theta = aa.norm();
  if (theta == 0.0) return aa;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double wrapped = std::fmod(theta, two_pi);
  if (wrapped > std::numbers::pi) wrapped -= two_pi;
  // wrapped is now in (-pi, pi]; a negative magnitude flips the axis.
  return (wrapped / theta) * aa;
}

TransformMatrix motion_to_matrix(const RigidMotion& motion) {
  TransformMatrix t;
  t.m.block<3, 3>(0, 0) = axis_angle_to_matrix(motion.rotation);
  t.m.block<3, 1>(0, 3) = motion.translation;
  return t;
}

RigidMotion matrix_to_motion(const TransformMatrix& t) {
  RigidMotion motion;
  motion.rotation = matrix_to_axis_angle(t.rotation());
  motion.translation = t.translation();
  return motion;
}

RigidMotion invert_motion(const RigidMotion& motion) {
  const Eigen::Matrix3d r = axis_angle_to_matrix(motion.rotation);
  RigidMotion inv;
  inv.rotation = -motion.rotation;
  inv.translation = -(r.transpose() * motion.translation);
  return inv;
}

RigidMotion compose_motions(const RigidMotion& second, const RigidMotion& first) {
  TransformMatrix t;
  t.m = motion_to_matrix(second).m * motion_to_matrix(first).m;
  return matrix_to_motion(t);
}

PointCloud lift(const DepthMap& depth, const CameraIntrinsics& intrinsics) {
  intrinsics.validate();
  PointCloud cloud(depth.width, depth.height);
  const double inv_fx = 1.0 / intrinsics.fx;
  const double inv_fy = 1.0 / intrinsics.fy;
  for (int y = 0; y < depth.height; ++y) {
    for (int x = 0; x < depth.width; ++x) {
      const double d = depth.at(x, y);
      // z = d exactly; x and y scale the normalized ray.
      cloud.at(x, y) = Eigen::Vector3d(d * (x - intrinsics.cx) * inv_fx,
                                       d * (y - intrinsics.cy) * inv_fy, d);
    }
  }
  return cloud;
}

PointCloud transform_points(const PointCloud& cloud, const TransformMatrix& t) {
  PointCloud out(cloud.width, cloud.height);
  const Eigen::Matrix3d r = t.rotation();
  const Eigen::Vector3d tr = t.translation();
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    out.points[i] = r * cloud.points[i] + tr;
  }
  return out;
}

ProjectionResult project(const PointCloud& cloud, const CameraIntrinsics& intrinsics,
                         double z_min) {
  intrinsics.validate();
  ProjectionResult result;
  result.grid = SampleGrid(cloud.width, cloud.height);
  result.depth = DepthMap(cloud.width, cloud.height, 0.0);
  result.in_front = ValidityMask(cloud.width, cloud.height, 0);

  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const Eigen::Vector3d& p = cloud.points[i];
    if (!(p.z() > z_min)) {
      result.grid.u[i] = nan;
      result.grid.v[i] = nan;
      continue;
    }
    result.grid.u[i] = intrinsics.fx * p.x() / p.z() + intrinsics.cx;
    result.grid.v[i] = intrinsics.fy * p.y() / p.z() + intrinsics.cy;
    result.depth.values[i] = p.z();
    result.in_front.values[i] = 1;
  }
  return result;
}

}  // namespace issl::geometry
