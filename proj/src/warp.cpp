#include "issl/warp.hpp"

#include <cmath>

#include "issl/parallel.hpp"

namespace issl::warp {

namespace {

// Corner indices and weights for one coordinate pair. Returns false when
// the coordinates are non-finite.
struct BilinearCell {
  int x0, y0;
  double wx, wy;  // weight of the x0+1 / y0+1 corner
};

inline bool make_cell(double u, double v, BilinearCell& cell) {
  if (!std::isfinite(u) || !std::isfinite(v)) return false;
  const double fu = std::floor(u);
  const double fv = std::floor(v);
  cell.x0 = static_cast<int>(fu);
  cell.y0 = static_cast<int>(fv);
  cell.wx = u - fu;
  cell.wy = v - fv;
  return true;
}

inline double fetch(const std::vector<double>& plane, int w, int h, int x, int y) {
  if (x < 0 || x >= w || y < 0 || y >= h) return 0.0;
  return plane[static_cast<size_t>(y) * w + x];
}

inline double gather_plane(const std::vector<double>& plane, int w, int h,
                           const BilinearCell& c) {
  const double v00 = fetch(plane, w, h, c.x0, c.y0);
  const double v10 = fetch(plane, w, h, c.x0 + 1, c.y0);
  const double v01 = fetch(plane, w, h, c.x0, c.y0 + 1);
  const double v11 = fetch(plane, w, h, c.x0 + 1, c.y0 + 1);
  const double top = v00 * (1.0 - c.wx) + v10 * c.wx;
  const double bot = v01 * (1.0 - c.wx) + v11 * c.wx;
  return top * (1.0 - c.wy) + bot * c.wy;
}

}  // namespace

Image bilinear_sample(const Image& source, const SampleGrid& grid) {
  Image out(grid.width, grid.height, source.channels, 0.0);
  const size_t n = grid.u.size();
  const size_t src_plane = source.plane_size();
  const size_t dst_plane = out.plane_size();
  parallel_for(static_cast<std::int64_t>(n), [&](std::int64_t i) {
    BilinearCell cell;
    if (!make_cell(grid.u[i], grid.v[i], cell)) return;
    for (int c = 0; c < source.channels; ++c) {
      const double* plane = source.values.data() + c * src_plane;
      // gather_plane works on raw planes; wrap the pointer arithmetic here
      // to avoid copying per channel.
      const double v00 = (cell.x0 < 0 || cell.x0 >= source.width || cell.y0 < 0 || cell.y0 >= source.height)
                             ? 0.0 : plane[static_cast<size_t>(cell.y0) * source.width + cell.x0];
      const double v10 = (cell.x0 + 1 < 0 || cell.x0 + 1 >= source.width || cell.y0 < 0 || cell.y0 >= source.height)
                             ? 0.0 : plane[static_cast<size_t>(cell.y0) * source.width + cell.x0 + 1];
      const double v01 = (cell.x0 < 0 || cell.x0 >= source.width || cell.y0 + 1 < 0 || cell.y0 + 1 >= source.height)
                             ? 0.0 : plane[static_cast<size_t>(cell.y0 + 1) * source.width + cell.x0];
      const double v11 = (cell.x0 + 1 < 0 || cell.x0 + 1 >= source.width || cell.y0 + 1 < 0 || cell.y0 + 1 >= source.height)
                             ? 0.0 : plane[static_cast<size_t>(cell.y0 + 1) * source.width + cell.x0 + 1];
      const double top = v00 * (1.0 - cell.wx) + v10 * cell.wx;
      const double bot = v01 * (1.0 - cell.wx) + v11 * cell.wx;
      out.values[c * dst_plane + i] = top * (1.0 - cell.wy) + bot * cell.wy;
    }
  });
  return out;
}

DepthMap bilinear_sample_depth(const DepthMap& source, const SampleGrid& grid) {
  DepthMap out(grid.width, grid.height, 0.0);
  parallel_for(static_cast<std::int64_t>(grid.u.size()), [&](std::int64_t i) {
    BilinearCell cell;
    if (!make_cell(grid.u[i], grid.v[i], cell)) return;
    out.values[i] = gather_plane(source.values, source.width, source.height, cell);
  });
  return out;
}

ValidityMask grid_validity(const SampleGrid& grid, int src_w, int src_h) {
  ValidityMask mask(grid.width, grid.height, 0);
  for (size_t i = 0; i < grid.u.size(); ++i) {
    const double u = grid.u[i];
    const double v = grid.v[i];
    if (std::isfinite(u) && std::isfinite(v) && u >= 0.0 && u <= src_w - 1.0 && v >= 0.0 &&
        v <= src_h - 1.0) {
      mask.values[i] = 1;
    }
  }
  return mask;
}

ValidityMask grid_validity(const SampleGrid& grid) {
  return grid_validity(grid, grid.width, grid.height);
}

SynthesisResult synthesize_view(const Image& source_image, const DepthMap& source_depth,
                                const DepthMap& target_depth, const RigidMotion& target_to_source,
                                const CameraIntrinsics& intrinsics, double z_min) {
  geometry::ProjectionResult proj;
  if (target_to_source.rotation.isZero(0.0) && target_to_source.translation.isZero(0.0)) {
    // With exactly zero motion the reprojection is the identity map on
    // pixel coordinates. Evaluating lift/project numerically would let
    // border pixels drift a ulp out of bounds and lose validity, so build
    // the exact result directly.
    proj.grid = SampleGrid(target_depth.width, target_depth.height);
    for (int y = 0; y < target_depth.height; ++y) {
      for (int x = 0; x < target_depth.width; ++x) {
        const size_t i = static_cast<size_t>(y) * target_depth.width + x;
        proj.grid.u[i] = x;
        proj.grid.v[i] = y;
      }
    }
    proj.depth = target_depth;
  } else {
    const PointCloud target_points = geometry::lift(target_depth, intrinsics);
    const TransformMatrix t = geometry::motion_to_matrix(target_to_source);
    const PointCloud moved = geometry::transform_points(target_points, t);
    proj = geometry::project(moved, intrinsics, z_min);
  }

  SynthesisResult result;
  result.image = bilinear_sample(source_image, proj.grid);
  result.depth = bilinear_sample_depth(source_depth, proj.grid);
  result.projected_z = std::move(proj.depth);
  // NaN grid entries fail the bounds check, so near-plane rejects fold in.
  result.valid = grid_validity(proj.grid, source_image.width, source_image.height);
  result.grid = std::move(proj.grid);
  return result;
}

}  // namespace issl::warp
