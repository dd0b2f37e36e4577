// Differentiable composition of the geometry pipeline: axis-angle to
// rotation matrix, backprojection, rigid transform, and projection, built
// from tape ops so gradients reach both the depth prediction and the pose
// variables. Forward values agree with the pure kernels in geometry.hpp.
#pragma once

#include <cstdint>
#include <vector>

#include "issl/autodiff.hpp"
#include "issl/geometry.hpp"
#include "issl/types.hpp"

namespace issl::graph {

/// Rodrigues formula on tape. `aa` is a size-3 tensor. The Taylor branch
/// is selected from the forward value of |aa|^2, mirroring the pure
/// kernel's threshold; each branch is smooth, so gradients are exact
/// within it (the crossover itself is below any trainable magnitude).
template <typename T>
ad::Tensor<T> rotation_from_axis_angle(const ad::Tensor<T>& aa) {
  ad::Tape<T>& tape = *aa.tape();
  auto rx = ad::slice(aa, {0}, {1});
  auto ry = ad::slice(aa, {1}, {1});
  auto rz = ad::slice(aa, {2}, {1});
  auto s = rx * rx + ry * ry + rz * rz;  // theta^2

  ad::Tensor<T> a, b;
  constexpr T threshold_sq = T(geometry::kRodriguesTaylorThreshold) *
                             T(geometry::kRodriguesTaylorThreshold);
  if (s.value() < threshold_sq) {
    a = T(1) - s / T(6);
    b = T(0.5) - s / T(24);
  } else {
    auto theta = ad::sqrt(s);
    a = ad::sin(theta) / theta;
    b = (T(1) - ad::cos(theta)) / s;
  }

  auto zero = tape.scalar(T(0));
  auto k = ad::stack_scalars(tape,
                             {zero, -rz, ry,
                              rz, zero, -rx,
                              -ry, rx, zero},
                             {3, 3});
  auto k2 = ad::matmul_small(k, k);
  auto identity = tape.constant({3, 3}, {T(1), T(0), T(0), T(0), T(1), T(0), T(0), T(0), T(1)});
  return identity + a * k + b * k2;
}

/// The reprojection of every target pixel into the source camera, with
/// gradients w.r.t. depth and pose. Validity is decided on forward values
/// (flag-and-mask); the clamped z keeps the division differentiable on
/// pixels that the mask will discard anyway.
template <typename T>
struct ReprojectionGraph {
  ad::Tensor<T> u, v;        // (H,W) sample coordinates in the source image
  ad::Tensor<T> z;           // (H,W) transformed z, clamped to >= z_min
  ValidityMask in_front;     // from the unclamped forward z
};

/// `pose` is a size-6 tensor: axis-angle rotation then translation.
template <typename T>
ReprojectionGraph<T> reproject(const ad::Tensor<T>& depth, const ad::Tensor<T>& pose,
                               const CameraIntrinsics& intrinsics,
                               double z_min = geometry::kDefaultZMin) {
  ad::Tape<T>& tape = *depth.tape();
  if (depth.shape().size() != 2) throw ValidationError("reproject: depth must be (H,W)");
  if (pose.shape() != ad::Shape{6}) throw ValidationError("reproject: pose must be size 6");
  const int h = depth.shape()[0];
  const int w = depth.shape()[1];

  // Constant normalized-ray planes: lift is depth * (u-cx)/fx etc.
  std::vector<T> ray_x(static_cast<size_t>(w) * h), ray_y(ray_x.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      ray_x[static_cast<size_t>(y) * w + x] = static_cast<T>((x - intrinsics.cx) / intrinsics.fx);
      ray_y[static_cast<size_t>(y) * w + x] = static_cast<T>((y - intrinsics.cy) / intrinsics.fy);
    }
  auto px = depth * tape.constant({h, w}, std::move(ray_x));
  auto py = depth * tape.constant({h, w}, std::move(ray_y));
  const auto& pz = depth;

  auto rot = rotation_from_axis_angle(ad::slice(pose, {0}, {3}));
  auto r = [&](int i, int j) { return ad::slice(rot, {i, j}, {1, 1}); };
  auto tx = ad::slice(pose, {3}, {1});
  auto ty = ad::slice(pose, {4}, {1});
  auto tz = ad::slice(pose, {5}, {1});

  auto qx = r(0, 0) * px + r(0, 1) * py + r(0, 2) * pz + tx;
  auto qy = r(1, 0) * px + r(1, 1) * py + r(1, 2) * pz + ty;
  auto qz = r(2, 0) * px + r(2, 1) * py + r(2, 2) * pz + tz;

  ReprojectionGraph<T> out;
  out.in_front = ValidityMask(w, h, 0);
  const auto& qz_vals = qz.values();
  for (size_t i = 0; i < qz_vals.size(); ++i) {
    out.in_front.values[i] = qz_vals[i] > static_cast<T>(z_min) ? 1 : 0;
  }
  out.z = ad::clamp(qz, static_cast<T>(z_min), std::numeric_limits<T>::infinity());
  out.u = qx / out.z * static_cast<T>(intrinsics.fx) + static_cast<T>(intrinsics.cx);
  out.v = qy / out.z * static_cast<T>(intrinsics.fy) + static_cast<T>(intrinsics.cy);
  return out;
}

template <typename T>
struct SynthesisGraph {
  ad::Tensor<T> image;    // (C,H,W) source gathered at the reprojection
  ad::Tensor<T> u, v, z;  // pass-through from reproject
  ValidityMask valid;     // in front AND inside the source raster
};

/// Differentiable view synthesis: gathers a constant source image at the
/// reprojection of the (differentiable) target depth under the
/// (differentiable) pose.
template <typename T>
SynthesisGraph<T> synthesize(const ad::Tensor<T>& source_image, const ad::Tensor<T>& depth,
                             const ad::Tensor<T>& pose, const CameraIntrinsics& intrinsics,
                             double z_min = geometry::kDefaultZMin) {
  if (source_image.shape().size() != 3) {
    throw ValidationError("synthesize: source image must be (C,H,W)");
  }
  ReprojectionGraph<T> proj = reproject(depth, pose, intrinsics, z_min);
  const int src_h = source_image.shape()[1];
  const int src_w = source_image.shape()[2];

  SynthesisGraph<T> out;
  out.image = ad::bilinear_sample_diff(source_image, proj.u, proj.v);
  out.valid = ValidityMask(proj.in_front.width, proj.in_front.height, 0);
  const auto& uv = proj.u.values();
  const auto& vv = proj.v.values();
  for (size_t i = 0; i < out.valid.values.size(); ++i) {
    out.valid.values[i] = (proj.in_front.values[i] != 0 && uv[i] >= T(0) &&
                           uv[i] <= T(src_w - 1) && vv[i] >= T(0) && vv[i] <= T(src_h - 1))
                              ? 1
                              : 0;
  }
  out.u = std::move(proj.u);
  out.v = std::move(proj.v);
  out.z = std::move(proj.z);
  return out;
}

}  // namespace issl::graph
