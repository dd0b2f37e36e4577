// Procedural test scenes: a textured background plane plus textured
// rectangular patches that move rigidly, rendered by exact ray-plane
// intersection. Everything about these scenes is analytic (depth,
// correspondences, instance masks), which is what makes them usable as
// oracles for the warp and training pipeline.
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "issl/random.hpp"
#include "issl/types.hpp"
#include "json.hpp"

namespace issl::synthdata {

/// Band-limited texture: per-channel sum of plane-wave sinusoids over the
/// surface's local metric coordinates. Values stay within
/// [base - amp_budget, base + amp_budget].
struct Texture {
  struct Wave {
    double freq_x = 0.0;  // cycles per meter
    double freq_y = 0.0;
    double phase = 0.0;
    double amplitude = 0.0;
  };
  std::vector<std::vector<Wave>> waves;  // one list per channel
  double base = 0.5;

  double eval(int channel, double x, double y) const;
};

/// Waves drawn with wavelengths in [min_wavelength, 4*min_wavelength] and
/// a total amplitude budget of 0.45 per channel, so values land in
/// [0.05, 0.95] and bilinear resampling error stays well under the warp
/// oracle threshold.
Texture make_texture(Rng& rng, int channels, int waves_per_channel, double min_wavelength);

struct ObjectSpec {
  double depth = 0.0;        // plane depth at the reference camera, meters
  double center_u = 0.0;     // image-plane center in the reference camera, px
  double center_v = 0.0;
  double width_px = 0.0;     // extent in pixels at the reference depth
  double height_px = 0.0;
  RigidMotion motion;        // applied once per frame, about the object center
};

struct SceneSpec {
  int width = 0;
  int height = 0;
  CameraIntrinsics intrinsics;
  double background_depth = 0.0;
  std::uint64_t texture_seed = 0;
  int waves_per_channel = 3;
  std::vector<RigidMotion> camera_trajectory;  // camera-to-world pose per frame
  std::vector<ObjectSpec> objects;

  int frame_count() const { return static_cast<int>(camera_trajectory.size()); }
  void validate() const;
};

/// Strict parse: unknown keys anywhere in the document are rejected.
SceneSpec parse_scene_spec(const nlohmann::json& j);
nlohmann::json scene_spec_to_json(const SceneSpec& spec);

struct RenderedFrame {
  Image image;
  DepthMap gt_depth;
  std::vector<int> instance_ids;  // 0 = background (static), i+1 = objects[i]
  RigidMotion camera_pose;
};

std::vector<RenderedFrame> render_sequence(const SceneSpec& spec);

/// Ego-motion taking target-camera coordinates to source-camera
/// coordinates, from the two camera-to-world poses.
RigidMotion relative_motion(const RigidMotion& target_pose, const RigidMotion& source_pose);

struct WarpResiduals {
  double static_mean = 0.0;                // |warped - target| over valid static pixels
  std::optional<double> dynamic_mean;      // same over moving-instance pixels, if any
};

/// Synthesizes every adjacent source frame into its target with GT depth
/// and GT ego-motion and averages the photometric residual per region.
WarpResiduals warp_residuals(const std::vector<RenderedFrame>& frames,
                             const CameraIntrinsics& intrinsics);

/// The static-region figure alone, the quantity the warp oracle bounds.
double gt_warp_residual(const std::vector<RenderedFrame>& frames,
                        const CameraIntrinsics& intrinsics);

}  // namespace issl::synthdata
