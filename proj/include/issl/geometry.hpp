#pragma once

#include <Eigen/Core>

#include "issl/types.hpp"

namespace issl::geometry {

constexpr double kDefaultZMin = 1e-3;

namespace detail {

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

// Rodrigues via R = I + A*K + B*K^2 with K = skew(aa) (unnormalized),
// A = sin(t)/t, B = (1-cos(t))/t^2. The Taylor variant replaces A and B by
// their second-order expansions; both are exposed so the crossover at the
// branch threshold can be checked for agreement.
Eigen::Matrix3d rodrigues_general(const Eigen::Vector3d& aa);
Eigen::Matrix3d rodrigues_taylor(const Eigen::Vector3d& aa);

}  // namespace detail

/// Threshold below which the Taylor expansion of Rodrigues is used.
constexpr double kRodriguesTaylorThreshold = 1e-8;

Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& aa);

/// Log map. Returns the axis-angle with magnitude in [0, pi]; the pi case
/// picks the axis with a deterministic sign convention (largest diagonal
/// entry, then first nonzero component positive).
Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& r);

/// Wraps the rotation magnitude into (-pi, pi], keeping the axis direction.
Eigen::Vector3d canonical_axis_angle(const Eigen::Vector3d& aa);

TransformMatrix motion_to_matrix(const RigidMotion& motion);
RigidMotion matrix_to_motion(const TransformMatrix& t);

/// Inverse of (R, t) is (R^T, -R^T t); in axis-angle terms the rotation
/// vector negates.
RigidMotion invert_motion(const RigidMotion& motion);
RigidMotion compose_motions(const RigidMotion& second, const RigidMotion& first);

/// Backprojects every pixel: p(u,v) = D(u,v) * K^-1 (u, v, 1)^T, so the z
/// component of each point equals the stored depth exactly.
PointCloud lift(const DepthMap& depth, const CameraIntrinsics& intrinsics);

PointCloud transform_points(const PointCloud& cloud, const TransformMatrix& t);

struct ProjectionResult {
  SampleGrid grid;       // non-finite where z <= z_min
  DepthMap depth;        // projected z, 0 where invalid
  ValidityMask in_front; // 1 where z > z_min
};

/// Projects camera-frame points to pixel coordinates u = fx*x/z + cx,
/// v = fy*y/z + cy. Points at or behind the near plane are flagged rather
/// than clamped: their grid entries are NaN and the mask is zero.
ProjectionResult project(const PointCloud& cloud, const CameraIntrinsics& intrinsics,
                         double z_min = kDefaultZMin);

}  // namespace issl::geometry
