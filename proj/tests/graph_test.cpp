#include "issl/graph.hpp"

#include <cmath>

#include "doctest.h"
#include "issl/random.hpp"
#include "issl/warp.hpp"
#include "oracles.hpp"

using namespace issl;
using ad::GradCheckInput;
using ad::Tape;
using ad::Tensor;

TEST_SUITE_BEGIN("graph");

TEST_CASE("tape rotation matches the pure kernel on both branches") {
  Rng rng = stream_rng(31, Stream::kTest, {0});
  for (double mag : {0.0, 1e-10, 1e-9, 1e-6, 0.01, 0.3, 2.5}) {
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    const Eigen::Vector3d aa = mag * axis;
    const Eigen::Matrix3d want = geometry::axis_angle_to_matrix(aa);

    Tape<double> tape;
    auto v = tape.variable({3}, {aa.x(), aa.y(), aa.z()});
    auto rot = graph::rotation_from_axis_angle(v);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        CHECK(rot.values()[i * 3 + j] == doctest::Approx(want(i, j)).epsilon(1e-12));
      }
  }
}

TEST_CASE("rotation gradients pass finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = stream_rng(seed, Stream::kTest, {1});
    GradCheckInput<double> aa{{3}, {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5),
                                    rng.uniform(-1.5, 1.5)}};
    const auto result = ad::grad_check<double>(
        [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
          auto rot = graph::rotation_from_axis_angle(v[0]);
          // A generic smooth functional of R.
          auto weights = t.constant({3, 3}, {0.3, -0.1, 0.7, 0.2, 0.9, -0.4, 0.5, 0.1, -0.8});
          return ad::reduce_sum(ad::mul(rot, weights));
        },
        {aa});
    CHECK(result.max_rel_err < 1e-4);
  }
}

TEST_CASE("tape reprojection matches the pure geometry pipeline") {
  CameraIntrinsics k{45.0, 47.0, 9.5, 7.5};
  Rng rng = stream_rng(31, Stream::kTest, {2});
  const int w = 20, h = 16;
  DepthMap depth(w, h);
  for (double& d : depth.values) d = rng.uniform(2.0, 8.0);
  RigidMotion m;
  m.rotation = Eigen::Vector3d(0.03, -0.02, 0.04);
  m.translation = Eigen::Vector3d(0.2, -0.1, 0.15);

  const auto pure = geometry::project(
      geometry::transform_points(geometry::lift(depth, k), geometry::motion_to_matrix(m)), k);

  Tape<double> tape;
  auto d_t = tape.variable({h, w}, depth.values);
  auto pose = tape.variable({6}, {m.rotation.x(), m.rotation.y(), m.rotation.z(),
                                  m.translation.x(), m.translation.y(), m.translation.z()});
  const auto proj = graph::reproject(d_t, pose, k);

  for (size_t i = 0; i < depth.values.size(); ++i) {
    CHECK(proj.in_front.values[i] == pure.in_front.values[i]);
    if (pure.in_front.values[i]) {
      CHECK(proj.u.values()[i] == doctest::Approx(pure.grid.u[i]).epsilon(1e-10));
      CHECK(proj.v.values()[i] == doctest::Approx(pure.grid.v[i]).epsilon(1e-10));
      CHECK(proj.z.values()[i] == doctest::Approx(pure.depth.values[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("near-plane pixels are flagged and their z clamped") {
  CameraIntrinsics k{30.0, 30.0, 3.5, 3.5};
  Tape<double> tape;
  auto d_t = tape.variable({2, 2}, {4.0, 4.0, 4.0, 4.0});
  // Translate almost the full depth toward the camera: z' = 4 - 3.9999 etc.
  auto pose = tape.variable({6}, {0.0, 0.0, 0.0, 0.0, 0.0, -4.1});
  const auto proj = graph::reproject(d_t, pose, k);
  for (int i = 0; i < 4; ++i) {
    CHECK(proj.in_front.values[i] == 0);
    CHECK(proj.z.values()[i] == geometry::kDefaultZMin);
  }
}

TEST_CASE("tape synthesis matches the pure warp") {
  CameraIntrinsics k{38.0, 40.0, 11.5, 8.5};
  Rng rng = stream_rng(31, Stream::kTest, {3});
  const int w = 24, h = 18;
  Image img(w, h, 3);
  for (double& v : img.values) v = rng.uniform(0.0, 1.0);
  DepthMap depth(w, h);
  for (double& d : depth.values) d = rng.uniform(3.0, 7.0);
  RigidMotion m;
  m.rotation = Eigen::Vector3d(-0.01, 0.02, 0.005);
  m.translation = Eigen::Vector3d(0.15, 0.05, -0.1);

  const auto pure = warp::synthesize_view(img, depth, depth, m, k);

  Tape<double> tape;
  auto src = tape.constant({3, h, w}, img.values);
  auto d_t = tape.variable({h, w}, depth.values);
  auto pose = tape.variable({6}, {m.rotation.x(), m.rotation.y(), m.rotation.z(),
                                  m.translation.x(), m.translation.y(), m.translation.z()});
  const auto synth = graph::synthesize(src, d_t, pose, k);

  // Compare away from the validity boundary, where a 1e-10 coordinate
  // difference between the two code paths could flip the in-bounds test.
  for (size_t i = 0; i < depth.values.size(); ++i) {
    const double u = pure.grid.u[i];
    const double v = pure.grid.v[i];
    const bool borderline = std::min({u, w - 1.0 - u, v, h - 1.0 - v}) < 1e-6;
    if (borderline) continue;
    CHECK(synth.valid.values[i] == pure.valid.values[i]);
    if (pure.valid.values[i]) {
      for (int c = 0; c < 3; ++c) {
        CHECK(synth.image.values()[c * depth.values.size() + i] ==
              doctest::Approx(pure.image.values[c * depth.values.size() + i]).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("depth and pose gradients flow through synthesis") {
  CameraIntrinsics k{10.0, 10.0, 3.5, 3.5};
  Rng rng = stream_rng(31, Stream::kTest, {4});
  const int w = 8, h = 8;
  std::vector<double> img(3 * w * h);
  for (double& v : img) v = rng.uniform(0.1, 0.9);
  GradCheckInput<double> depth{{h, w}, {}};
  for (int i = 0; i < w * h; ++i) depth.values.push_back(rng.uniform(3.0, 5.0));
  GradCheckInput<double> pose{{6}, {0.01, -0.02, 0.015, 0.05, -0.03, 0.04}};

  // Pin the sampling mask to the unperturbed forward pass so the function
  // under test is smooth in a neighborhood (mask flips are step
  // discontinuities by construction).
  std::vector<double> mask_values;
  double margin = 1.0;
  {
    Tape<double> tape;
    auto src = tape.constant({3, h, w}, img);
    auto d_t = tape.variable({h, w}, depth.values);
    auto p = tape.variable({6}, pose.values);
    const auto synth = graph::synthesize(src, d_t, p, k);
    for (std::uint8_t b : synth.valid.values) mask_values.push_back(b ? 1.0 : 0.0);
    // No sampled coordinate may sit near a bilinear cell edge, where the
    // interpolant kinks; the builder is then C1 at the test point.
    for (size_t i = 0; i < synth.valid.values.size(); ++i) {
      if (!synth.valid.values[i]) continue;
      const double fu = synth.u.values()[i] - std::floor(synth.u.values()[i]);
      const double fv = synth.v.values()[i] - std::floor(synth.v.values()[i]);
      margin = std::min({margin, fu, 1.0 - fu, fv, 1.0 - fv});
    }
  }
  REQUIRE(margin > 1e-3);  // pinned seed keeps clear of cell edges

  auto build = [&, mask_values](Tape<double>& t, const std::vector<Tensor<double>>& v) {
    auto src = t.constant({3, h, w}, img);
    const auto synth = graph::synthesize(src, v[0], v[1], k);
    auto target = t.constant({3, h, w}, img);
    auto diff = synth.image - target;
    auto sq = ad::mul(diff, diff);
    // Mask each channel with the pinned validity.
    std::vector<double> mask3;
    for (int c = 0; c < 3; ++c) mask3.insert(mask3.end(), mask_values.begin(), mask_values.end());
    return ad::masked_reduce(sq, t.constant({3, h, w}, mask3), ad::MaskedReduce::kMean);
  };
  const auto result = ad::grad_check<double>(build, {depth, pose});
  INFO("worst analytic ", result.worst_analytic, " numeric ", result.worst_numeric);
  CHECK(result.max_rel_err < 1e-4);
}

TEST_SUITE_END();
