#pragma once

#include "issl/geometry.hpp"
#include "issl/types.hpp"

namespace issl::warp {

/// Gathers image values at continuous grid coordinates with bilinear
/// interpolation. The four corners are floor(u), floor(u)+1 (same for v);
/// reads outside the raster contribute zero. Non-finite coordinates
/// produce zero output.
Image bilinear_sample(const Image& source, const SampleGrid& grid);

/// Same gather for a single-plane depth map.
DepthMap bilinear_sample_depth(const DepthMap& source, const SampleGrid& grid);

/// 1 where the coordinate pair is finite and lands inside
/// [0, src_w-1] x [0, src_h-1], so the interpolation needed no zero-padded
/// reads. The overload without explicit dims samples a raster shaped like
/// the grid itself.
ValidityMask grid_validity(const SampleGrid& grid, int src_w, int src_h);
ValidityMask grid_validity(const SampleGrid& grid);

struct SynthesisResult {
  Image image;          // source gathered into the target raster
  DepthMap depth;       // source depth gathered the same way
  DepthMap projected_z; // z of the transformed target points
  SampleGrid grid;
  ValidityMask valid;   // in front of the near plane AND inside the source
};

/// Inverse warp: lifts the target depth, moves the points by
/// target-to-source motion, projects into the source camera and gathers
/// the source image and depth there.
SynthesisResult synthesize_view(const Image& source_image, const DepthMap& source_depth,
                                const DepthMap& target_depth, const RigidMotion& target_to_source,
                                const CameraIntrinsics& intrinsics,
                                double z_min = geometry::kDefaultZMin);

}  // namespace issl::warp
