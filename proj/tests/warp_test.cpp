#include "issl/warp.hpp"

#include <cmath>
#include <limits>

#include "doctest.h"
#include "issl/random.hpp"
#include "oracles.hpp"

using namespace issl;

namespace {

Image random_image(int w, int h, int c, Rng& rng) {
  Image img(w, h, c);
  for (double& v : img.values) v = rng.uniform(0.0, 1.0);
  return img;
}

SampleGrid identity_grid(int w, int h) {
  SampleGrid g(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      g.u[static_cast<size_t>(y) * w + x] = x;
      g.v[static_cast<size_t>(y) * w + x] = y;
    }
  return g;
}

}  // namespace

TEST_SUITE_BEGIN("warp");

TEST_CASE("integer grid reproduces the image bitwise") {
  Rng rng = stream_rng(11, Stream::kTest, {0});
  const Image img = random_image(9, 7, 3, rng);
  const Image out = warp::bilinear_sample(img, identity_grid(9, 7));
  CHECK(out.values == img.values);
}

TEST_CASE("fractional coordinates match the scalar oracle") {
  Rng rng = stream_rng(11, Stream::kTest, {1});
  const Image img = random_image(12, 10, 1, rng);
  SampleGrid grid(12, 10);
  for (size_t i = 0; i < grid.u.size(); ++i) {
    grid.u[i] = rng.uniform(-2.0, 13.0);  // includes out-of-bounds reads
    grid.v[i] = rng.uniform(-2.0, 11.0);
  }
  const Image out = warp::bilinear_sample(img, grid);
  for (size_t i = 0; i < grid.u.size(); ++i) {
    const double want = oracles::bilinear(img.values, 12, 10, grid.u[i], grid.v[i]);
    CHECK(out.values[i] == doctest::Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("affine images interpolate exactly") {
  // Bilinear interpolation reproduces a + b*x + c*y with no error away
  // from the zero-padded border.
  Image img(16, 12, 1);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 16; ++x) img.at(0, y, x) = 0.01 + 0.02 * x + 0.03 * y;

  Rng rng = stream_rng(11, Stream::kTest, {2});
  SampleGrid grid(16, 12);
  for (size_t i = 0; i < grid.u.size(); ++i) {
    grid.u[i] = rng.uniform(0.0, 15.0);
    grid.v[i] = rng.uniform(0.0, 11.0);
  }
  const Image out = warp::bilinear_sample(img, grid);
  for (size_t i = 0; i < grid.u.size(); ++i) {
    CHECK(out.values[i] ==
          doctest::Approx(0.01 + 0.02 * grid.u[i] + 0.03 * grid.v[i]).epsilon(1e-12));
  }
}

TEST_CASE("reads outside the raster are zero-filled") {
  Image img(4, 4, 1, 1.0);
  SampleGrid grid(3, 1);
  grid.u = {-5.0, 10.0, -0.5};
  grid.v = {1.0, 1.0, 1.0};
  const Image out = warp::bilinear_sample(img, grid);
  CHECK(out.values[0] == 0.0);
  CHECK(out.values[1] == 0.0);
  CHECK(out.values[2] == 0.5);  // half the mass comes from the padded column
}

TEST_CASE("the last row and column sample exactly") {
  Rng rng = stream_rng(11, Stream::kTest, {3});
  const Image img = random_image(5, 4, 1, rng);
  SampleGrid grid(2, 1);
  grid.u = {4.0, 2.0};
  grid.v = {1.0, 3.0};
  const Image out = warp::bilinear_sample(img, grid);
  // At integer coordinates on the far edge the +1 corner has weight zero,
  // so the padded read cannot leak in.
  CHECK(out.values[0] == img.at(0, 1, 4));
  CHECK(out.values[1] == img.at(0, 3, 2));
}

TEST_CASE("non-finite coordinates yield zero output") {
  Image img(4, 4, 1, 0.7);
  SampleGrid grid(2, 1);
  grid.u = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity()};
  grid.v = {1.0, 1.0};
  const Image out = warp::bilinear_sample(img, grid);
  CHECK(out.values[0] == 0.0);
  CHECK(out.values[1] == 0.0);
}

TEST_CASE("validity is inclusive on the border and rejects NaN") {
  SampleGrid grid(5, 1);
  grid.u = {0.0, 4.0, 4.0 + 1e-9, -1e-9, std::numeric_limits<double>::quiet_NaN()};
  grid.v = {0.0, 0.0, 0.0, 0.0, 0.0};
  const ValidityMask mask = warp::grid_validity(grid, 5, 1);
  CHECK(mask.values[0] == 1);
  CHECK(mask.values[1] == 1);
  CHECK(mask.values[2] == 0);
  CHECK(mask.values[3] == 0);
  CHECK(mask.values[4] == 0);
}

TEST_CASE("depth sampling matches the oracle") {
  Rng rng = stream_rng(11, Stream::kTest, {4});
  DepthMap depth(8, 8);
  for (double& d : depth.values) d = rng.uniform(1.0, 9.0);
  SampleGrid grid(8, 8);
  for (size_t i = 0; i < grid.u.size(); ++i) {
    grid.u[i] = rng.uniform(0.0, 7.0);
    grid.v[i] = rng.uniform(0.0, 7.0);
  }
  const DepthMap out = warp::bilinear_sample_depth(depth, grid);
  for (size_t i = 0; i < grid.u.size(); ++i) {
    CHECK(out.values[i] ==
          doctest::Approx(oracles::bilinear(depth.values, 8, 8, grid.u[i], grid.v[i]))
              .epsilon(1e-14));
  }
}

TEST_CASE("identity motion synthesizes the source unchanged") {
  Rng rng = stream_rng(11, Stream::kTest, {5});
  CameraIntrinsics k{40.0, 40.0, 7.5, 5.5};
  const Image img = random_image(16, 12, 3, rng);
  DepthMap depth(16, 12);
  for (double& d : depth.values) d = rng.uniform(2.0, 6.0);

  const auto synth = warp::synthesize_view(img, depth, depth, RigidMotion{}, k);
  for (size_t i = 0; i < img.values.size(); ++i) {
    CHECK(synth.image.values[i] == doctest::Approx(img.values[i]).epsilon(1e-12));
  }
  CHECK(synth.valid.count() == 16 * 12);
  for (size_t i = 0; i < depth.values.size(); ++i) {
    CHECK(synth.depth.values[i] == doctest::Approx(depth.values[i]).epsilon(1e-12));
    CHECK(synth.projected_z.values[i] == depth.values[i]);
  }
}

TEST_CASE("lateral translation shifts a fronto-parallel plane by fx*tx/d") {
  CameraIntrinsics k{60.0, 60.0, 15.5, 11.5};
  const double d = 5.0;
  const double tx = 0.25;
  const double shift = k.fx * tx / d;  // 3 px

  // Affine brightness so interpolation is exact where defined.
  Image img(32, 24, 1);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 32; ++x) img.at(0, y, x) = (x * 0.02 + y * 0.01) / 2.0;
  DepthMap depth(32, 24, d);

  RigidMotion m;
  m.translation = Eigen::Vector3d(tx, 0.0, 0.0);
  const auto synth = warp::synthesize_view(img, depth, depth, m, k);

  for (int y = 0; y < 24; ++y) {
    for (int x = 0; x < 32; ++x) {
      const double src_x = x + shift;
      if (src_x > 31.0) {
        CHECK(synth.valid.at(x, y) == 0);
        continue;
      }
      CHECK(synth.valid.at(x, y) == 1);
      CHECK(synth.image.at(0, y, x) ==
            doctest::Approx((src_x * 0.02 + y * 0.01) / 2.0).epsilon(1e-12));
    }
  }
}

TEST_SUITE_END();
