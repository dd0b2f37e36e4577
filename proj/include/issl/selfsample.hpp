// Self-sample generation: draw a random rigid motion from a scheduled
// distribution, rigidly move the point cloud lifted from the current depth
// estimate, and resample image and depth at the reprojected coordinates.
// The outputs are data (constants) as far as training is concerned;
// gradients reach the network only through re-inference on the generated
// image.
#pragma once

#include <vector>

#include "issl/random.hpp"
#include "issl/types.hpp"

namespace issl::selfsample {

enum class Distribution { kUniform, kGaussian };

/// Where the generated depth comes from: resampling the input depth map at
/// the reprojected coordinates (the default), or the z-coordinate of the
/// rigidly moved points. The two agree only for motions that preserve
/// camera-space depth.
enum class DepthSource { kSampled, kTransformedZ };

struct SamplerConfig {
  double theta_r_start = 0.005;  // radians, per-axis rotation bound at epoch 0
  double theta_r_end = 0.2;      // radians, bound at the final epoch
  double theta_t = 0.005;        // meters, per-axis translation bound (constant)
  int n_k = 4;                   // self-samples per target image
  Distribution distribution = Distribution::kUniform;
  int total_epochs = 20;
  DepthSource depth_source = DepthSource::kSampled;

  void validate() const;
};

struct SelfSample {
  Image image;
  DepthMap depth;  // zero where invalid
  ValidityMask validity;
  RigidMotion motion;
};

/// Rotation bound for a given epoch, linear from start to end. The
/// endpoints are returned exactly (no arithmetic) so schedules pin down
/// bitwise.
double theta_r_at(const SamplerConfig& config, int epoch);

/// One rigid motion draw. Components are consumed in a fixed order
/// (rotation xyz, then translation xyz) so streams stay aligned across
/// configurations. Uniform mode draws each component on [-bound, bound];
/// gaussian mode draws zero-mean with sigma = bound/2 and clips to the
/// bound.
RigidMotion sample_motion(const SamplerConfig& config, int epoch, Rng& rng);

SelfSample generate_self_sample(const Image& image, const DepthMap& depth, const RigidMotion& m,
                                const CameraIntrinsics& intrinsics,
                                DepthSource depth_source = DepthSource::kSampled);

/// n_k motions drawn sequentially from `rng`, each synthesized into a
/// SelfSample.
std::vector<SelfSample> generate_batch(const Image& image, const DepthMap& depth,
                                       const CameraIntrinsics& intrinsics,
                                       const SamplerConfig& config, int epoch, Rng& rng);

}  // namespace issl::selfsample
